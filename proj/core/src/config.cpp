#include "gradia/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <map>
#include <set>
#include <sstream>

#include "gradia/error.hpp"
#include "gradia/io.hpp"

namespace gradia {
namespace pt = boost::property_tree;

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? "" : item.substr(b, e - b + 1));
  }
  return out;
}

template <typename T>
T parse_number(const std::string& text, const std::string& key) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("invalid value '" + text + "' for " + key);
  }
  return value;
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

// Reads typed values out of one section and remembers which keys it used.
class Section {
 public:
  Section(const pt::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  template <typename T>
  void number(const char* key, T& out) {
    if (auto text = raw(key)) out = parse_number<T>(*text, qualified(key));
  }
  void boolean(const char* key, bool& out) {
    if (auto text = raw(key)) {
      if (*text == "on" || *text == "true" || *text == "1") {
        out = true;
      } else if (*text == "off" || *text == "false" || *text == "0") {
        out = false;
      } else {
        throw ConfigError("invalid boolean '" + *text + "' for " + qualified(key));
      }
    }
  }
  template <typename T, typename Parse>
  void choice(const char* key, T& out, Parse parse) {
    if (auto text = raw(key)) {
      auto value = parse(*text);
      if (!value) throw ConfigError("unknown value '" + *text + "' for " + qualified(key));
      out = *value;
    }
  }
  std::optional<std::string> raw(const char* key) {
    used_.insert(key);
    if (tree_ == nullptr) return std::nullopt;
    auto child = tree_->get_child_optional(key);
    if (!child) return std::nullopt;
    return child->data();
  }
  void reject_unknown() const {
    if (tree_ == nullptr) return;
    for (const auto& [key, _] : *tree_) {
      if (!used_.contains(key)) throw ConfigError("unknown key " + qualified(key));
    }
  }

 private:
  std::string qualified(const std::string& key) const { return name_ + "." + key; }

  const pt::ptree* tree_;
  std::string name_;
  std::set<std::string> used_;
};

void read_train(Section& s, TrainConfig& c, bool finetune) {
  s.choice("optimizer", c.optimizer, parse_optimizer);
  s.number("learning_rate", c.learning_rate);
  s.number("momentum", c.momentum);
  s.number("epochs", c.epochs);
  s.number("batch_size", c.batch_size);
  s.number("seed", c.seed);
  if (!finetune) return;
  s.boolean("higher_order", c.higher_order);
  s.choice("divergence", c.divergence, parse_divergence);
  s.number("alpha", c.factors.alpha);
  s.number("beta", c.factors.beta);
  s.number("gamma", c.factors.gamma);
  s.choice("condition", c.condition, parse_condition);
}

void write_train(pt::ptree& tree, const std::string& name, const TrainConfig& c,
                 bool finetune) {
  tree.put(name + ".optimizer", to_string(c.optimizer));
  tree.put(name + ".learning_rate", format_double(c.learning_rate));
  tree.put(name + ".momentum", format_double(c.momentum));
  tree.put(name + ".epochs", c.epochs);
  tree.put(name + ".batch_size", c.batch_size);
  tree.put(name + ".seed", c.seed);
  if (!finetune) return;
  tree.put(name + ".higher_order", c.higher_order ? "on" : "off");
  tree.put(name + ".divergence", to_string(c.divergence));
  tree.put(name + ".alpha", format_double(c.factors.alpha));
  tree.put(name + ".beta", format_double(c.factors.beta));
  tree.put(name + ".gamma", format_double(c.factors.gamma));
  tree.put(name + ".condition", to_string(c.condition));
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& key) {
  std::vector<T> out;
  for (const auto& item : split(text, ',')) out.push_back(parse_number<T>(item, key));
  return out;
}

}  // namespace

WorkbenchConfig::WorkbenchConfig()
    : baseline(TrainConfig::baseline_defaults()),
      finetune(TrainConfig::finetune_defaults()) {
  fewshot.settings.tuning = TrainConfig::finetune_defaults();
}

void WorkbenchConfig::validate() const {
  scene.validate();
  if (dataset_dir.empty() && (counts.train == 0 || counts.test == 0)) {
    throw ConfigError("train and test splits must be nonempty");
  }
  gradia::validate(model);
  if (model.input_height != scene.image_size || model.input_width != scene.image_size) {
    throw ConfigError("model input size does not match the scene image size");
  }
  baseline.validate();
  finetune.validate();
  oracle.validate();
  fewshot.settings.tuning.validate();
  if (fewshot.shots.empty()) throw ConfigError("fewshot.shots must not be empty");
  for (std::size_t n : fewshot.shots) {
    FewShotScenario{n, fewshot.num_seeds}.validate();
  }
  if (fewshot.settings.steps < 1) throw ConfigError("fewshot.steps must be at least 1");
  for (double w : fewshot.sweep_weights) {
    if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("fewshot.sweep_weights must lie in [0, 1]");
  }
  if (!(fewshot.settings.attention_weight >= 0.0 && fewshot.settings.attention_weight <= 1.0)) {
    throw ConfigError("fewshot.attention_weight must lie in [0, 1]");
  }
  if (fewshot.pretrain_epochs < 1) throw ConfigError("fewshot.pretrain_epochs must be at least 1");
}

std::vector<ConvLayerConfig> parse_conv_stack(const std::string& text) {
  std::vector<ConvLayerConfig> stack;
  for (const auto& item : split(text, ',')) {
    const auto parts = split(item, ':');
    if (parts.size() != 5) {
      throw ConfigError("conv layer '" + item +
                        "' must be out_maps:kernel:stride:padding:pool");
    }
    ConvLayerConfig layer;
    layer.out_maps = parse_number<std::size_t>(parts[0], "model.conv_stack");
    layer.kernel = parse_number<std::size_t>(parts[1], "model.conv_stack");
    layer.stride = parse_number<std::size_t>(parts[2], "model.conv_stack");
    layer.padding = parse_number<std::size_t>(parts[3], "model.conv_stack");
    if (parts[4] == "max2") {
      layer.pool = Pooling::kMax2;
    } else if (parts[4] == "none") {
      layer.pool = Pooling::kNone;
    } else {
      throw ConfigError("unknown pooling '" + parts[4] + "'");
    }
    stack.push_back(layer);
  }
  if (stack.empty()) throw ConfigError("model.conv_stack is empty");
  return stack;
}

std::string format_conv_stack(const std::vector<ConvLayerConfig>& stack) {
  std::string out;
  for (std::size_t i = 0; i < stack.size(); ++i) {
    const auto& l = stack[i];
    if (i) out += ",";
    out += std::to_string(l.out_maps) + ":" + std::to_string(l.kernel) + ":" +
           std::to_string(l.stride) + ":" + std::to_string(l.padding) + ":" +
           (l.pool == Pooling::kMax2 ? "max2" : "none");
  }
  return out;
}

WorkbenchConfig parse_config(const std::string& text) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  static const std::set<std::string> kSections = {"scene",  "model",  "baseline",
                                                  "finetune", "oracle", "fewshot"};
  for (const auto& [name, child] : tree) {
    if (!kSections.contains(name) || child.empty()) {
      throw ConfigError("unknown config section or top-level key '" + name + "'");
    }
  }
  auto section = [&tree](const char* name) {
    auto child = tree.get_child_optional(name);
    return Section(child ? &*child : nullptr, name);
  };

  WorkbenchConfig c;
  {
    Section s = section("scene");
    s.number("image_size", c.scene.image_size);
    s.choice("class0_shape", c.scene.class0_shape, parse_glyph);
    s.choice("class1_shape", c.scene.class1_shape, parse_glyph);
    s.choice("context_glyph", c.scene.context_glyph, parse_glyph);
    s.number("shape_size_min", c.scene.shape_size_min);
    s.number("shape_size_max", c.scene.shape_size_max);
    s.number("p_train", c.scene.context_cooccurrence_train);
    s.number("p_test", c.scene.context_cooccurrence_test);
    s.number("context_attached_class", c.scene.context_attached_class);
    s.number("noise_std", c.scene.noise_std);
    s.number("intensity_min", c.scene.intensity_min);
    s.number("seed", c.scene.seed);
    if (auto total = s.raw("total")) {
      c.counts = SplitCounts::from_total(parse_number<std::size_t>(*total, "scene.total"));
    }
    s.number("train", c.counts.train);
    s.number("validation", c.counts.validation);
    s.number("test", c.counts.test);
    if (auto dir = s.raw("dataset_dir")) c.dataset_dir = *dir;
    s.reject_unknown();
  }
  {
    Section s = section("model");
    if (auto stack = s.raw("conv_stack")) c.model.conv_stack = parse_conv_stack(*stack);
    s.number("num_classes", c.model.num_classes);
    s.reject_unknown();
    c.model.input_height = c.scene.image_size;
    c.model.input_width = c.scene.image_size;
  }
  {
    Section s = section("baseline");
    read_train(s, c.baseline, false);
    s.reject_unknown();
  }
  {
    Section s = section("finetune");
    read_train(s, c.finetune, true);
    s.reject_unknown();
  }
  {
    Section s = section("oracle");
    s.number("binarize_tau", c.oracle.binarize_tau);
    s.number("q1_coverage_min", c.oracle.q1_coverage_min);
    s.number("q2_coverage_max", c.oracle.q2_coverage_max);
    s.reject_unknown();
  }
  {
    Section s = section("fewshot");
    FewShotConfig& f = c.fewshot;
    if (auto shots = s.raw("shots")) f.shots = parse_list<std::size_t>(*shots, "fewshot.shots");
    s.number("num_seeds", f.num_seeds);
    s.number("steps", f.settings.steps);
    s.number("attention_weight", f.settings.attention_weight);
    s.number("seed", f.settings.seed);
    s.number("learning_rate", f.settings.tuning.learning_rate);
    s.number("momentum", f.settings.tuning.momentum);
    s.choice("optimizer", f.settings.tuning.optimizer, parse_optimizer);
    s.number("batch_size", f.settings.tuning.batch_size);
    s.boolean("higher_order", f.settings.tuning.higher_order);
    s.choice("divergence", f.settings.tuning.divergence, parse_divergence);
    if (auto w = s.raw("sweep_weights")) {
      f.sweep_weights = parse_list<double>(*w, "fewshot.sweep_weights");
    }
    s.number("sweep_shots", f.sweep_shots);
    s.number("pretrain_epochs", f.pretrain_epochs);
    s.reject_unknown();
  }
  c.validate();
  return c;
}

WorkbenchConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ConfigError("config file not found: " + path.string());
  }
  return parse_config(read_text(path));
}

std::string format_config(const WorkbenchConfig& c) {
  pt::ptree tree;
  tree.put("scene.image_size", c.scene.image_size);
  tree.put("scene.class0_shape", to_string(c.scene.class0_shape));
  tree.put("scene.class1_shape", to_string(c.scene.class1_shape));
  tree.put("scene.context_glyph", to_string(c.scene.context_glyph));
  tree.put("scene.shape_size_min", c.scene.shape_size_min);
  tree.put("scene.shape_size_max", c.scene.shape_size_max);
  tree.put("scene.p_train", format_double(c.scene.context_cooccurrence_train));
  tree.put("scene.p_test", format_double(c.scene.context_cooccurrence_test));
  tree.put("scene.context_attached_class", c.scene.context_attached_class);
  tree.put("scene.noise_std", format_double(c.scene.noise_std));
  tree.put("scene.intensity_min", format_double(c.scene.intensity_min));
  tree.put("scene.seed", c.scene.seed);
  tree.put("scene.train", c.counts.train);
  tree.put("scene.validation", c.counts.validation);
  tree.put("scene.test", c.counts.test);
  if (!c.dataset_dir.empty()) tree.put("scene.dataset_dir", c.dataset_dir.string());
  tree.put("model.conv_stack", format_conv_stack(c.model.conv_stack));
  tree.put("model.num_classes", c.model.num_classes);
  write_train(tree, "baseline", c.baseline, false);
  write_train(tree, "finetune", c.finetune, true);
  tree.put("oracle.binarize_tau", format_double(c.oracle.binarize_tau));
  tree.put("oracle.q1_coverage_min", format_double(c.oracle.q1_coverage_min));
  tree.put("oracle.q2_coverage_max", format_double(c.oracle.q2_coverage_max));
  const FewShotConfig& f = c.fewshot;
  tree.put("fewshot.shots", join(f.shots));
  tree.put("fewshot.num_seeds", f.num_seeds);
  tree.put("fewshot.steps", f.settings.steps);
  tree.put("fewshot.attention_weight", format_double(f.settings.attention_weight));
  tree.put("fewshot.seed", f.settings.seed);
  tree.put("fewshot.optimizer", to_string(f.settings.tuning.optimizer));
  tree.put("fewshot.learning_rate", format_double(f.settings.tuning.learning_rate));
  tree.put("fewshot.momentum", format_double(f.settings.tuning.momentum));
  tree.put("fewshot.batch_size", f.settings.tuning.batch_size);
  tree.put("fewshot.higher_order", f.settings.tuning.higher_order ? "on" : "off");
  tree.put("fewshot.divergence", to_string(f.settings.tuning.divergence));
  tree.put("fewshot.sweep_weights", join(f.sweep_weights));
  tree.put("fewshot.sweep_shots", f.sweep_shots);
  tree.put("fewshot.pretrain_epochs", f.pretrain_epochs);
  std::ostringstream out;
  pt::write_ini(out, tree);
  return out.str();
}

}  // namespace gradia
