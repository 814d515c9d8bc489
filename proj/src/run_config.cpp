#include "denet/run_config.hpp"

#include <cstdint>
#include <limits>

#include "denet/errors.hpp"

namespace denet {

namespace {

class Section {
 public:
  Section(const Json& root, const char* name) : where_(name) {
    auto it = root.find(name);
    if (it == root.end()) return;
    if (!it->is_object()) throw ValidationError(where_ + ": expected a JSON object");
    j_ = &*it;
  }

  void allow(const std::vector<std::string>& keys) const {
    if (j_) schema::reject_unknown_keys(*j_, keys, where_);
  }

  const Json* find(const char* key) const {
    if (!j_) return nullptr;
    auto it = j_->find(key);
    return it == j_->end() ? nullptr : &*it;
  }

  std::string name(const char* key) const { return where_ + "." + key; }

  void read(const char* key, double& out) const {
    if (const Json* v = find(key)) {
      if (!v->is_number()) throw ValidationError(name(key) + " must be a number");
      out = v->get<double>();
    }
  }

  template <typename U>
    requires std::is_unsigned_v<U>
  void read(const char* key, U& out) const {
    if (const Json* v = find(key)) out = as_unsigned<U>(*v, name(key));
  }

  void read(const char* key, std::string& out) const {
    if (const Json* v = find(key)) {
      if (!v->is_string()) throw ValidationError(name(key) + " must be a string");
      out = v->get<std::string>();
    }
  }

  template <typename U>
  static U as_unsigned(const Json& v, const std::string& what) {
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0))
      throw ValidationError(what + " must be a non-negative integer");
    const auto x = v.get<std::uint64_t>();
    if (x > std::numeric_limits<U>::max()) throw ValidationError(what + " is out of range");
    return static_cast<U>(x);
  }

 private:
  std::string where_;
  const Json* j_ = nullptr;
};

void read_model(const Json& root, EnetConfig& m) {
  Section s(root, "model");
  s.allow({"middle_blocks", "base_channels", "decoder_channels", "dilated_stack", "output_activation"});
  s.read("middle_blocks", m.middle_blocks);
  s.read("base_channels", m.base_channels);
  if (const Json* v = s.find("decoder_channels")) {
    if (!v->is_array()) throw ValidationError(s.name("decoder_channels") + " must be an array");
    m.decoder_channels.clear();
    for (std::size_t i = 0; i < v->size(); ++i)
      m.decoder_channels.push_back(
          Section::as_unsigned<std::size_t>((*v)[i], s.name("decoder_channels") + "[" + std::to_string(i) + "]"));
  }
  if (const Json* v = s.find("dilated_stack")) {
    if (!v->is_array()) throw ValidationError(s.name("dilated_stack") + " must be an array");
    m.dilated_stack.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string w = s.name("dilated_stack") + "[" + std::to_string(i) + "]";
      const Json& e = (*v)[i];
      if (!e.is_object()) throw ValidationError(w + " must be {\"channels\": int, \"dilation\": int}");
      schema::reject_unknown_keys(e, {"channels", "dilation"}, w);
      if (!e.contains("channels") || !e.contains("dilation"))
        throw ValidationError(w + " needs both 'channels' and 'dilation'");
      m.dilated_stack.push_back({Section::as_unsigned<std::size_t>(e["channels"], w + ".channels"),
                                 Section::as_unsigned<std::size_t>(e["dilation"], w + ".dilation")});
    }
  }
  std::string act = "relu";
  s.read("output_activation", act);
  if (act != "relu") throw ValidationError(s.name("output_activation") + " must be \"relu\"");
}

void read_kernel(const Json& root, KernelPolicy& k) {
  Section s(root, "kernel");
  s.allow({"mode", "sigma_fixed", "beta", "k_neighbors", "sigma_min", "sigma_max"});
  std::string mode = k.mode == KernelMode::Fixed ? "fixed" : "adaptive";
  s.read("mode", mode);
  if (mode == "fixed")
    k.mode = KernelMode::Fixed;
  else if (mode == "adaptive")
    k.mode = KernelMode::Adaptive;
  else
    throw ValidationError(s.name("mode") + " must be \"fixed\" or \"adaptive\"");
  s.read("sigma_fixed", k.sigma_fixed);
  s.read("beta", k.beta);
  s.read("k_neighbors", k.k_neighbors);
  s.read("sigma_min", k.sigma_min);
  s.read("sigma_max", k.sigma_max);
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  fusion.validate();
  train.validate();
  kernel.validate();
}

RunConfig run_config_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  schema::reject_unknown_keys(j, {"model", "loss", "fusion", "train", "kernel", "paths"}, "config");
  RunConfig c;
  read_model(j, c.model);
  {
    Section s(j, "loss");
    s.allow({"alpha", "denom_floor"});
    s.read("alpha", c.loss.alpha);
    s.read("denom_floor", c.loss.denom_floor);
  }
  {
    Section s(j, "fusion");
    s.allow({"score_threshold", "min_box_height_frac", "mask_dilation_px"});
    s.read("score_threshold", c.fusion.score_threshold);
    s.read("min_box_height_frac", c.fusion.min_box_height_frac);
    s.read("mask_dilation_px", c.fusion.mask_dilation_px);
  }
  {
    Section s(j, "train");
    s.allow({"lr_initial", "lr_decay_factor", "lr_decay_every", "epochs", "batch_size", "seed", "adam_beta1",
             "adam_beta2", "adam_eps"});
    s.read("lr_initial", c.train.lr_initial);
    s.read("lr_decay_factor", c.train.lr_decay_factor);
    s.read("lr_decay_every", c.train.lr_decay_every);
    s.read("epochs", c.train.epochs);
    s.read("batch_size", c.train.batch_size);
    s.read("seed", c.train.seed);
    s.read("adam_beta1", c.train.adam_beta1);
    s.read("adam_beta2", c.train.adam_beta2);
    s.read("adam_eps", c.train.adam_eps);
  }
  read_kernel(j, c.kernel);
  {
    Section s(j, "paths");
    s.allow({"dataset", "detections", "checkpoint"});
    s.read("dataset", c.paths.dataset);
    s.read("detections", c.paths.detections);
    s.read("checkpoint", c.paths.checkpoint);
  }
  c.validate();
  return c;
}

Json run_config_to_json(const RunConfig& c) {
  Json stack = Json::array();
  for (const auto& l : c.model.dilated_stack) stack.push_back({{"channels", l.channels}, {"dilation", l.dilation}});
  return {
      {"model",
       {{"middle_blocks", c.model.middle_blocks},
        {"base_channels", c.model.base_channels},
        {"decoder_channels", c.model.decoder_channels},
        {"dilated_stack", stack},
        {"output_activation", "relu"}}},
      {"loss", {{"alpha", c.loss.alpha}, {"denom_floor", c.loss.denom_floor}}},
      {"fusion",
       {{"score_threshold", c.fusion.score_threshold},
        {"min_box_height_frac", c.fusion.min_box_height_frac},
        {"mask_dilation_px", c.fusion.mask_dilation_px}}},
      {"train",
       {{"lr_initial", c.train.lr_initial},
        {"lr_decay_factor", c.train.lr_decay_factor},
        {"lr_decay_every", c.train.lr_decay_every},
        {"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"seed", c.train.seed},
        {"adam_beta1", c.train.adam_beta1},
        {"adam_beta2", c.train.adam_beta2},
        {"adam_eps", c.train.adam_eps}}},
      {"kernel",
       {{"mode", c.kernel.mode == KernelMode::Fixed ? "fixed" : "adaptive"},
        {"sigma_fixed", c.kernel.sigma_fixed},
        {"beta", c.kernel.beta},
        {"k_neighbors", c.kernel.k_neighbors},
        {"sigma_min", c.kernel.sigma_min},
        {"sigma_max", c.kernel.sigma_max}}},
      {"paths",
       {{"dataset", c.paths.dataset}, {"detections", c.paths.detections}, {"checkpoint", c.paths.checkpoint}}},
  };
}

RunConfig load_run_config(const std::filesystem::path& path) {
  try {
    return run_config_from_json(read_json_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace denet
