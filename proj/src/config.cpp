#include "c2l/config.hpp"

#include <fstream>
#include <set>

namespace c2l {

namespace {

std::string_view reduction_name(Reduction r) { return r == Reduction::mean ? "mean" : "sum"; }
std::string_view normalization_name(Normalization n) { return n == Normalization::none ? "none" : "group_norm"; }

// Reads the keys of one JSON object and remembers which were consumed so
// that leftovers can be reported.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  const Json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void get(const std::string& key, bool& out) {
    if (!has(key)) return;
    const Json& v = raw(key);
    if (!v.is_boolean()) type_error(key, "a boolean");
    out = v.get<bool>();
  }
  void get(const std::string& key, double& out) {
    if (!has(key)) return;
    const Json& v = raw(key);
    if (!v.is_number()) type_error(key, "a number");
    out = v.get<double>();
  }
  void get(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const Json& v = raw(key);
    if (!v.is_string()) type_error(key, "a string");
    out = v.get<std::string>();
  }
  template <typename Int>
    requires std::is_integral_v<Int>
  void get(const std::string& key, Int& out) {
    if (!has(key)) return;
    out = to_int<Int>(raw(key), key);
  }
  template <typename Int>
  void get(const std::string& key, std::vector<Int>& out) {
    if (!has(key)) return;
    const Json& v = raw(key);
    if (!v.is_array()) type_error(key, "an array of integers");
    out.clear();
    for (const auto& e : v) out.push_back(to_int<Int>(e, key));
  }
  void get(const std::string& key, std::vector<std::string>& out) {
    if (!has(key)) return;
    const Json& v = raw(key);
    if (!v.is_array()) type_error(key, "an array of strings");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_string()) type_error(key, "an array of strings");
      out.push_back(e.get<std::string>());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + child(it.key()) + "'");
    }
  }

  [[noreturn]] void type_error(const std::string& key, const char* what) const {
    throw ConfigError("config key '" + child(key) + "' must be " + what);
  }

 private:
  template <typename Int>
  Int to_int(const Json& v, const std::string& key) const {
    if (v.is_number_unsigned()) return static_cast<Int>(v.get<std::uint64_t>());
    if (v.is_number_integer()) {
      const auto x = v.get<std::int64_t>();
      if (std::is_unsigned_v<Int> && x < 0) type_error(key, "a non-negative integer");
      return static_cast<Int>(x);
    }
    type_error(key, "an integer");
  }
  std::string where() const { return path_.empty() ? "config" : "config key '" + path_ + "'"; }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
auto parse_enum(Reader& r, const std::string& key, Fn parse) {
  const Json& v = r.raw(key);
  if (!v.is_string()) r.type_error(key, "a string");
  try {
    return parse(v.get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config key '" + r.child(key) + "': " + e.what());
  }
}

AugmentConfig augment_from_json(const Json& j, AugmentConfig c, const std::string& path) {
  Reader r(j, path);
  r.get("crop", c.crop);
  r.get("crop_scale_min", c.crop_scale_min);
  r.get("crop_scale_max", c.crop_scale_max);
  r.get("rotate", c.rotate);
  r.get("rotation_degrees", c.rotation_degrees);
  r.get("hflip", c.hflip);
  r.get("hflip_prob", c.hflip_prob);
  r.get("grayscale", c.grayscale);
  r.get("cutout", c.cutout);
  r.get("cutout_count", c.cutout_count);
  r.get("cutout_fraction", c.cutout_fraction);
  r.finish();
  return c;
}

EncoderConfig encoder_from(const Json& j, EncoderConfig c, const std::string& path) {
  Reader r(j, path);
  r.get("height", c.height);
  r.get("width", c.width);
  r.get("channels", c.channels);
  r.get("feature_dim", c.feature_dim);
  if (r.has("normalization")) {
    c.normalization = parse_enum(r, "normalization", [](const std::string& s) {
      if (s == "none") return Normalization::none;
      if (s == "group_norm") return Normalization::group_norm;
      throw std::invalid_argument("expected none or group_norm");
    });
  }
  r.get("groups", c.groups);
  r.finish();
  return c;
}

TrainConfig train_from(const Json& j, TrainConfig c, const std::string& path) {
  Reader r(j, path);
  if (r.has("encoder")) c.encoder = encoder_from(r.raw("encoder"), c.encoder, r.child("encoder"));
  if (r.has("augment")) c.augment = augment_from_json(r.raw("augment"), c.augment, r.child("augment"));
  r.get("theta", c.theta);
  r.get("tau", c.tau);
  r.get("batch_size", c.batch_size);
  r.get("queue_size", c.queue_size);
  r.get("epochs", c.epochs);
  r.get("lr", c.lr);
  r.get("weight_decay", c.weight_decay);
  r.get("sgd_momentum", c.sgd_momentum);
  r.get("lr_drop_epochs", c.lr_drop_epochs);
  if (r.has("loss_reduction")) {
    c.reduction = parse_enum(r, "loss_reduction", [](const std::string& s) {
      if (s == "mean") return Reduction::mean;
      if (s == "sum") return Reduction::sum;
      throw std::invalid_argument("expected mean or sum");
    });
  }
  if (r.has("mixup")) c.mixup = parse_enum(r, "mixup", [](const std::string& s) { return parse_mixup_mode(s); });
  r.get("seed", c.seed);
  r.get("checkpoint_every", c.checkpoint_every);
  r.finish();
  return c;
}

}  // namespace

Json to_json(const EncoderConfig& c) {
  return Json{{"height", c.height},
              {"width", c.width},
              {"channels", c.channels},
              {"feature_dim", c.feature_dim},
              {"normalization", normalization_name(c.normalization)},
              {"groups", c.groups}};
}

Json to_json(const AugmentConfig& c) {
  return Json{{"crop", c.crop},
              {"crop_scale_min", c.crop_scale_min},
              {"crop_scale_max", c.crop_scale_max},
              {"rotate", c.rotate},
              {"rotation_degrees", c.rotation_degrees},
              {"hflip", c.hflip},
              {"hflip_prob", c.hflip_prob},
              {"grayscale", c.grayscale},
              {"cutout", c.cutout},
              {"cutout_count", c.cutout_count},
              {"cutout_fraction", c.cutout_fraction}};
}

Json to_json(const SynthConfig& c) {
  return Json{{"num_unlabeled", c.num_unlabeled},
              {"num_labeled_train", c.num_labeled_train},
              {"num_labeled_test", c.num_labeled_test},
              {"height", c.height},
              {"width", c.width},
              {"seed", c.seed},
              {"noise_sigma", c.noise_sigma},
              {"intensity_jitter", c.intensity_jitter},
              {"structure_min", c.structure_min},
              {"structure_max", c.structure_max},
              {"contrast_min", c.contrast_min},
              {"contrast_max", c.contrast_max},
              {"background_min", c.background_min},
              {"background_max", c.background_max},
              {"body_min", c.body_min},
              {"body_max", c.body_max},
              {"disc_radius_min", c.disc_radius_min},
              {"disc_radius_max", c.disc_radius_max},
              {"bar_length_min", c.bar_length_min},
              {"bar_length_max", c.bar_length_max}};
}

Json to_json(const TrainConfig& c) {
  return Json{{"encoder", to_json(c.encoder)},
              {"augment", to_json(c.augment)},
              {"theta", c.theta},
              {"tau", c.tau},
              {"batch_size", c.batch_size},
              {"queue_size", c.queue_size},
              {"epochs", c.epochs},
              {"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"sgd_momentum", c.sgd_momentum},
              {"lr_drop_epochs", c.resolved_drop_epochs()},
              {"loss_reduction", reduction_name(c.reduction)},
              {"mixup", mixup_mode_name(c.mixup)},
              {"seed", c.seed},
              {"checkpoint_every", c.checkpoint_every}};
}

Json to_json(const ProbeConfig& c) {
  return Json{{"lr", c.lr},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"weight_decay", c.weight_decay},
              {"seed", c.seed}};
}

Json to_json(const FineTuneConfig& c) {
  return Json{{"lr", c.lr},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"weight_decay", c.weight_decay},
              {"seed", c.seed}};
}

Json to_json(const AblateConfig& c) {
  Json modes = Json::array();
  for (auto m : c.modes) modes.push_back(mixup_mode_name(m));
  return Json{{"modes", modes},
              {"queue_sizes", c.queue_sizes},
              {"augment_variants", c.augment_variants},
              {"seeds", c.seeds},
              {"parallel", c.parallel}};
}

Json to_json(const RunConfig& c) {
  return Json{{"data", c.data},
              {"out", c.out},
              {"deterministic", c.deterministic},
              {"synth", to_json(c.synth)},
              {"train", to_json(c.train)},
              {"probe", to_json(c.probe)},
              {"finetune", to_json(c.finetune)},
              {"ablate", to_json(c.ablate)}};
}

EncoderConfig encoder_from_json(const Json& j, EncoderConfig base) { return encoder_from(j, std::move(base), "encoder"); }

TrainConfig train_from_json(const Json& j, TrainConfig base) { return train_from(j, std::move(base), "train"); }

RunConfig run_from_json(const Json& j, RunConfig c) {
  Reader r(j, "");
  r.get("data", c.data);
  r.get("out", c.out);
  r.get("deterministic", c.deterministic);
  if (r.has("synth")) {
    Reader s(r.raw("synth"), "synth");
    s.get("num_unlabeled", c.synth.num_unlabeled);
    s.get("num_labeled_train", c.synth.num_labeled_train);
    s.get("num_labeled_test", c.synth.num_labeled_test);
    s.get("height", c.synth.height);
    s.get("width", c.synth.width);
    s.get("seed", c.synth.seed);
    s.get("noise_sigma", c.synth.noise_sigma);
    s.get("intensity_jitter", c.synth.intensity_jitter);
    s.get("structure_min", c.synth.structure_min);
    s.get("structure_max", c.synth.structure_max);
    s.get("contrast_min", c.synth.contrast_min);
    s.get("contrast_max", c.synth.contrast_max);
    s.get("background_min", c.synth.background_min);
    s.get("background_max", c.synth.background_max);
    s.get("body_min", c.synth.body_min);
    s.get("body_max", c.synth.body_max);
    s.get("disc_radius_min", c.synth.disc_radius_min);
    s.get("disc_radius_max", c.synth.disc_radius_max);
    s.get("bar_length_min", c.synth.bar_length_min);
    s.get("bar_length_max", c.synth.bar_length_max);
    s.finish();
  }
  if (r.has("train")) c.train = train_from(r.raw("train"), c.train, "train");
  if (r.has("probe")) {
    Reader p(r.raw("probe"), "probe");
    p.get("lr", c.probe.lr);
    p.get("epochs", c.probe.epochs);
    p.get("batch_size", c.probe.batch_size);
    p.get("weight_decay", c.probe.weight_decay);
    p.get("seed", c.probe.seed);
    p.finish();
  }
  if (r.has("finetune")) {
    Reader f(r.raw("finetune"), "finetune");
    f.get("lr", c.finetune.lr);
    f.get("epochs", c.finetune.epochs);
    f.get("batch_size", c.finetune.batch_size);
    f.get("weight_decay", c.finetune.weight_decay);
    f.get("seed", c.finetune.seed);
    f.finish();
  }
  if (r.has("ablate")) {
    Reader a(r.raw("ablate"), "ablate");
    if (a.has("modes")) {
      std::vector<std::string> names;
      a.get("modes", names);
      c.ablate.modes.clear();
      for (const auto& n : names) {
        try {
          c.ablate.modes.push_back(parse_mixup_mode(n));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string("config key 'ablate.modes': ") + e.what());
        }
      }
    }
    a.get("queue_sizes", c.ablate.queue_sizes);
    a.get("augment_variants", c.ablate.augment_variants);
    a.get("seeds", c.ablate.seeds);
    a.get("parallel", c.ablate.parallel);
    a.finish();
  }
  r.finish();
  try {
    c.synth.validate();
    c.train.validate();
    c.probe.validate();
    c.finetune.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  // One key set per open object; a repeated key is an error rather than the
  // parser's silent last-one-wins.
  std::vector<std::set<std::string>> open;
  std::string duplicate;
  auto strict = [&](int, Json::parse_event_t event, Json& parsed) {
    switch (event) {
      case Json::parse_event_t::object_start:
        open.emplace_back();
        break;
      case Json::parse_event_t::object_end:
        open.pop_back();
        break;
      case Json::parse_event_t::key:
        if (!open.back().insert(parsed.get<std::string>()).second && duplicate.empty()) {
          duplicate = parsed.get<std::string>();
        }
        break;
      default:
        break;
    }
    return true;
  };
  Json j;
  try {
    j = Json::parse(in, strict);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!duplicate.empty()) throw ConfigError(path.string() + ": duplicate key '" + duplicate + "'");
  return run_from_json(j);
}

void echo_config(const RunConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "config.json").string());
  out << to_json(config).dump(2) << "\n";
}

}  // namespace c2l
