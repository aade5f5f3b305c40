#include "ssm/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace ssm {

namespace {

std::string trim(std::string_view s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
  return out;
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig rc;
  const CorpusConfig corpus;
  const PretrainConfig pre;
  const FinetuneConfig ft;
  auto num = [](double x) {
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
  };
  auto b = [](bool x) { return std::string(x ? "true" : "false"); };
  auto& v = rc.values_;

  v["run.seed"] = "0";
  v["run.out"] = "";

  v["data.manifest"] = "";
  v["data.n_pretrain"] = std::to_string(corpus.n_pretrain);
  v["data.n_labeled"] = std::to_string(corpus.n_labeled);
  v["data.val_frac"] = num(corpus.val_frac);
  v["data.test_frac"] = num(corpus.test_frac);
  v["data.min_length"] = std::to_string(corpus.min_length);
  v["data.max_length"] = std::to_string(corpus.max_length);
  v["data.alphabet"] = corpus.alphabet;

  // Empty model keys keep the preset's value.
  v["model.preset"] = "nano";
  for (const char* k : {"patch", "dim", "depth", "heads", "regressor_depth", "n_windows", "projector_out",
                        "decoder_depth", "decoder_dim", "decoder_heads"})
    v[std::string("model.") + k] = "";

  v["pretrain.epochs"] = std::to_string(pre.epochs);
  v["pretrain.warmup_epochs"] = std::to_string(pre.warmup_epochs);
  v["pretrain.base_lr"] = num(pre.base_lr);
  v["pretrain.min_lr"] = num(pre.min_lr);
  v["pretrain.batch_size"] = std::to_string(pre.batch_size);
  v["pretrain.weight_decay"] = num(pre.weight_decay);
  v["pretrain.beta1"] = num(pre.beta1);
  v["pretrain.beta2"] = num(pre.beta2);
  v["pretrain.ema_momentum"] = num(pre.ema_momentum);
  v["pretrain.alpha"] = num(pre.alpha);
  v["pretrain.tau"] = num(pre.tau);
  v["pretrain.grad_clip"] = num(pre.grad_clip);
  v["pretrain.input_mode"] = to_string(pre.input_mode);
  v["pretrain.use_regressor"] = b(pre.use_regressor);
  v["pretrain.use_pixel_branch"] = b(pre.use_pixel_branch);
  v["pretrain.use_feature_branch"] = b(pre.use_feature_branch);
  v["pretrain.use_irregular_view"] = b(pre.use_irregular_view);
  v["pretrain.use_projector"] = b(pre.use_projector);
  v["pretrain.use_dis"] = b(pre.use_dis);
  v["pretrain.use_den"] = b(pre.use_den);
  v["pretrain.same_image_negatives"] = b(pre.same_image_negatives);
  v["pretrain.weak_augment"] = "true";
  v["pretrain.noise_sigma"] = num(pre.noise_sigma);
  v["pretrain.noise_blur_sigma"] = num(pre.noise_blur_sigma);
  v["pretrain.max_images"] = std::to_string(pre.max_images);
  v["pretrain.resume"] = "";

  v["finetune.init"] = "scratch";
  v["finetune.freeze_encoder"] = b(ft.freeze_encoder);
  v["finetune.epochs"] = std::to_string(ft.epochs);
  v["finetune.batch_size"] = std::to_string(ft.batch_size);
  v["finetune.lr"] = num(ft.lr);
  v["finetune.warmup_epochs"] = std::to_string(ft.warmup_epochs);
  v["finetune.weight_decay"] = num(ft.weight_decay);
  v["finetune.beta1"] = num(ft.beta1);
  v["finetune.beta2"] = num(ft.beta2);
  v["finetune.grad_clip"] = num(ft.grad_clip);
  v["finetune.train_fraction"] = num(ft.train_fraction);
  v["finetune.fractions"] = "";

  v["eval.checkpoint"] = "";
  v["eval.splits"] = "val,test";

  v["reconstruct.checkpoint"] = "";
  v["reconstruct.kinds"] = "HFlip,VFlip,Rotate180";
  v["reconstruct.n_images"] = "4";
  v["reconstruct.split"] = "test";

  v["ablate.modes"] = "HS,VS,RS,mixed,noise_blur,other_image";
  v["ablate.losses"] = "dis,den,dis+den";
  v["ablate.loss_mode"] = "mixed";

  v["gradcheck.step"] = "0.001";
  return rc;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!has(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": bad section header");
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    if (section.empty()) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": key outside a section");
    std::string key = section + "." + trim(std::string_view(t).substr(0, eq));
    try {
      set(key, trim(std::string_view(t).substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::merge_override(const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  set(trim(std::string_view(assignment).substr(0, eq)), trim(std::string_view(assignment).substr(eq + 1)));
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

int RunConfig::get_int(const std::string& key) const { return parse_number<int>(key, get(key)); }
uint64_t RunConfig::get_u64(const std::string& key) const { return parse_number<uint64_t>(key, get(key)); }

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  std::string v = get(key);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + get(key) + "'");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : values_) j[k] = v;
  return j;
}

std::string RunConfig::digest() const {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : to_json().dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(h ^ (h >> 32)));
  return buf;
}

CorpusConfig corpus_config_from(const RunConfig& rc) {
  CorpusConfig c;
  c.n_pretrain = rc.get_int("data.n_pretrain");
  c.n_labeled = rc.get_int("data.n_labeled");
  c.val_frac = rc.get_double("data.val_frac");
  c.test_frac = rc.get_double("data.test_frac");
  c.min_length = rc.get_int("data.min_length");
  c.max_length = rc.get_int("data.max_length");
  c.alphabet = rc.get("data.alphabet");
  c.seed = rc.get_u64("run.seed");
  c.validate();
  return c;
}

nn::ModelConfig model_config_from(const RunConfig& rc) {
  nn::ModelConfig m = nn::ModelConfig::preset_config(rc.get("model.preset"));
  auto opt = [&](const char* key, int& field) {
    std::string k = std::string("model.") + key;
    if (!rc.get(k).empty()) field = rc.get_int(k);
  };
  opt("patch", m.patch);
  opt("dim", m.dim);
  opt("depth", m.depth);
  opt("heads", m.heads);
  opt("regressor_depth", m.regressor_depth);
  opt("n_windows", m.projector.n_windows);
  opt("projector_out", m.projector.out_dim);
  opt("decoder_depth", m.decoder.depth);
  opt("decoder_dim", m.decoder.dim);
  opt("decoder_heads", m.decoder.heads);
  m.validate();
  return m;
}

PretrainConfig pretrain_config_from(const RunConfig& rc) {
  PretrainConfig c;
  c.model = model_config_from(rc);
  c.epochs = rc.get_int("pretrain.epochs");
  c.warmup_epochs = rc.get_int("pretrain.warmup_epochs");
  c.base_lr = rc.get_double("pretrain.base_lr");
  c.min_lr = rc.get_double("pretrain.min_lr");
  c.batch_size = rc.get_int("pretrain.batch_size");
  c.weight_decay = rc.get_double("pretrain.weight_decay");
  c.beta1 = rc.get_double("pretrain.beta1");
  c.beta2 = rc.get_double("pretrain.beta2");
  c.ema_momentum = rc.get_double("pretrain.ema_momentum");
  c.alpha = rc.get_double("pretrain.alpha");
  c.tau = rc.get_double("pretrain.tau");
  c.grad_clip = rc.get_double("pretrain.grad_clip");
  c.input_mode = parse_input_mode(rc.get("pretrain.input_mode"));
  c.use_regressor = rc.get_bool("pretrain.use_regressor");
  c.use_pixel_branch = rc.get_bool("pretrain.use_pixel_branch");
  c.use_feature_branch = rc.get_bool("pretrain.use_feature_branch");
  c.use_irregular_view = rc.get_bool("pretrain.use_irregular_view");
  c.use_projector = rc.get_bool("pretrain.use_projector");
  c.use_dis = rc.get_bool("pretrain.use_dis");
  c.use_den = rc.get_bool("pretrain.use_den");
  c.same_image_negatives = rc.get_bool("pretrain.same_image_negatives");
  if (!rc.get_bool("pretrain.weak_augment")) c.weak = WeakAugmentConfig::identity();
  c.noise_sigma = rc.get_double("pretrain.noise_sigma");
  c.noise_blur_sigma = rc.get_double("pretrain.noise_blur_sigma");
  c.max_images = rc.get_int("pretrain.max_images");
  c.seed = rc.get_u64("run.seed");
  c.validate();
  return c;
}

FinetuneConfig finetune_config_from(const RunConfig& rc) {
  FinetuneConfig c;
  c.model = model_config_from(rc);
  const std::string& init = rc.get("finetune.init");
  if (!init.empty() && init != "scratch") c.init_checkpoint = std::filesystem::path(init);
  c.freeze_encoder = rc.get_bool("finetune.freeze_encoder");
  c.epochs = rc.get_int("finetune.epochs");
  c.batch_size = rc.get_int("finetune.batch_size");
  c.lr = rc.get_double("finetune.lr");
  c.warmup_epochs = rc.get_int("finetune.warmup_epochs");
  c.weight_decay = rc.get_double("finetune.weight_decay");
  c.beta1 = rc.get_double("finetune.beta1");
  c.beta2 = rc.get_double("finetune.beta2");
  c.grad_clip = rc.get_double("finetune.grad_clip");
  c.train_fraction = rc.get_double("finetune.train_fraction");
  c.seed = rc.get_u64("run.seed");
  c.validate();
  return c;
}

}  // namespace ssm
