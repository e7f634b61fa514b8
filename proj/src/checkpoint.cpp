#include "damnet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

using json = nlohmann::json;

namespace damnet {

static const unsigned char kDamcMagic[5] = {0x44, 0x41, 0x4D, 0x43, 0x01};

static json model_config_json(const ModelConfig& c) {
  return json{{"widths", c.widths},
              {"conv_kernel", c.conv_kernel},
              {"spatial_attn_kernel", c.spatial_attn_kernel},
              {"reduction", c.reduction},
              {"num_classes", c.num_classes},
              {"input_channels", c.input_channels},
              {"seed", c.seed},
              {"spatial_attn_sum", c.spatial_attn_sum}};
}

static ModelConfig model_config_parse(const json& j) {
  ModelConfig c;
  if (j.contains("widths")) c.widths = j["widths"].get<std::vector<int64_t>>();
  if (j.contains("conv_kernel")) c.conv_kernel = j["conv_kernel"].get<int64_t>();
  if (j.contains("spatial_attn_kernel")) c.spatial_attn_kernel = j["spatial_attn_kernel"].get<int64_t>();
  if (j.contains("reduction")) c.reduction = j["reduction"].get<int64_t>();
  if (j.contains("num_classes")) c.num_classes = j["num_classes"].get<int64_t>();
  if (j.contains("input_channels")) c.input_channels = j["input_channels"].get<int64_t>();
  if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
  if (j.contains("spatial_attn_sum")) c.spatial_attn_sum = j["spatial_attn_sum"].get<bool>();
  return c;
}

std::string model_config_to_json(const ModelConfig& c) { return model_config_json(c).dump(2); }

ModelConfig model_config_from_json(const std::string& text) { return model_config_parse(json::parse(text)); }

static void write_tensor(std::ofstream& f, const std::string& name, const Tensor& t) {
  const uint16_t nlen = static_cast<uint16_t>(name.size());
  f.write(reinterpret_cast<const char*>(&nlen), sizeof(nlen));
  f.write(name.data(), nlen);
  const uint8_t ndim = static_cast<uint8_t>(t.rank());
  f.write(reinterpret_cast<const char*>(&ndim), sizeof(ndim));
  for (int64_t d : t.dims) {
    const uint32_t e = static_cast<uint32_t>(d);
    f.write(reinterpret_cast<const char*>(&e), sizeof(e));
  }
  f.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

void save_checkpoint(const std::string& path, Backbone& model, int64_t epoch, uint64_t run_seed,
                     const OptimState<float>* optim, const OptimConfig* optim_cfg) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open '" + path + "'");
  f.write(reinterpret_cast<const char*>(kDamcMagic), 5);

  uint32_t count = 0;
  for (auto* p : model.parameters()) {
    (void)p;
    ++count;
  }
  count += static_cast<uint32_t>(model.buffers().size());
  if (optim) count += static_cast<uint32_t>(optim->slot1.size() + optim->slot2.size());
  f.write(reinterpret_cast<const char*>(&count), sizeof(count));

  for (auto* p : model.parameters()) write_tensor(f, p->name, p->value);
  for (auto& [name, buf] : model.buffers()) write_tensor(f, name, *buf);
  if (optim) {
    for (const auto& [name, t] : optim->slot1) write_tensor(f, "optim.m." + name, t);
    for (const auto& [name, t] : optim->slot2) write_tensor(f, "optim.v." + name, t);
  }

  json trailer = {{"version", 1},
                  {"model", model_config_json(model.cfg)},
                  {"epoch", epoch},
                  {"rng", {{"seed", run_seed}}}};
  if (optim && optim_cfg) {
    trailer["optim"] = {{"kind", optim_cfg->kind == OptimKind::adam ? "adam" : "sgd_momentum"},
                        {"lr", optim_cfg->lr},
                        {"momentum", optim_cfg->momentum},
                        {"beta2", optim_cfg->beta2},
                        {"weight_decay", optim_cfg->weight_decay},
                        {"eps", optim_cfg->eps},
                        {"step_count", optim->step_count}};
  }
  const std::string text = trailer.dump();
  const uint64_t tlen = text.size();
  f.write(reinterpret_cast<const char*>(&tlen), sizeof(tlen));
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw std::runtime_error("save_checkpoint: short write to '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path, const ModelConfig* override_cfg) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open '" + path + "'");
  unsigned char magic[5] = {0};
  f.read(reinterpret_cast<char*>(magic), 5);
  if (f.gcount() != 5 || std::memcmp(magic, kDamcMagic, 5) != 0)
    throw std::runtime_error("load_checkpoint: '" + path + "': bad magic or unsupported version");
  uint32_t count = 0;
  f.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!f) throw std::runtime_error("load_checkpoint: '" + path + "': truncated header");

  std::map<std::string, Tensor> tensors;
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t nlen = 0;
    f.read(reinterpret_cast<char*>(&nlen), sizeof(nlen));
    std::string name(nlen, '\0');
    f.read(name.data(), nlen);
    uint8_t ndim = 0;
    f.read(reinterpret_cast<char*>(&ndim), sizeof(ndim));
    if (!f) throw std::runtime_error("load_checkpoint: '" + path + "': truncated tensor table");
    Shape dims(ndim);
    for (uint8_t d = 0; d < ndim; ++d) {
      uint32_t e = 0;
      f.read(reinterpret_cast<char*>(&e), sizeof(e));
      dims[d] = static_cast<int64_t>(e);
    }
    if (!f) throw std::runtime_error("load_checkpoint: '" + path + "': truncated tensor dims for '" + name + "'");
    Tensor t(dims);
    const std::streamsize want = static_cast<std::streamsize>(t.data.size() * sizeof(float));
    f.read(reinterpret_cast<char*>(t.data.data()), want);
    if (f.gcount() != want)
      throw std::runtime_error("load_checkpoint: '" + path + "': truncated tensor data for '" + name + "'");
    tensors.emplace(std::move(name), std::move(t));
  }

  uint64_t tlen = 0;
  f.read(reinterpret_cast<char*>(&tlen), sizeof(tlen));
  if (!f) throw std::runtime_error("load_checkpoint: '" + path + "': missing trailer");
  std::string text(tlen, '\0');
  f.read(text.data(), static_cast<std::streamsize>(tlen));
  if (f.gcount() != static_cast<std::streamsize>(tlen))
    throw std::runtime_error("load_checkpoint: '" + path + "': truncated trailer");
  const json trailer = json::parse(text);

  LoadedCheckpoint out;
  const ModelConfig cfg = override_cfg ? *override_cfg : model_config_parse(trailer.at("model"));
  out.model = std::make_unique<Backbone>(cfg);
  out.epoch = trailer.value("epoch", int64_t{0});
  if (trailer.contains("rng")) out.run_seed = trailer["rng"].value("seed", uint64_t{0});

  auto take = [&](const std::string& name, Tensor& dst) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("load_checkpoint: '" + path + "': missing tensor '" + name + "'");
    if (it->second.dims != dst.dims)
      throw std::runtime_error("load_checkpoint: shape mismatch for tensor '" + name + "': checkpoint has " +
                               shape_str(it->second.dims) + ", model expects " + shape_str(dst.dims));
    dst = std::move(it->second);
  };
  for (auto* p : out.model->parameters()) take(p->name, p->value);
  for (auto& [name, buf] : out.model->buffers()) take(name, *buf);

  if (trailer.contains("optim")) {
    out.has_optim_state = true;
    const json& oj = trailer["optim"];
    out.optim_config.kind = oj.value("kind", "adam") == std::string("adam") ? OptimKind::adam : OptimKind::sgd_momentum;
    out.optim_config.lr = oj.value("lr", 1e-3);
    out.optim_config.momentum = oj.value("momentum", 0.9);
    out.optim_config.beta2 = oj.value("beta2", 0.999);
    out.optim_config.weight_decay = oj.value("weight_decay", 1e-6);
    out.optim_config.eps = oj.value("eps", 1e-8);
    out.optim_state.step_count = oj.value("step_count", int64_t{0});
    for (auto& [name, t] : tensors) {
      if (name.rfind("optim.m.", 0) == 0) out.optim_state.slot1.emplace(name.substr(8), std::move(t));
      else if (name.rfind("optim.v.", 0) == 0) out.optim_state.slot2.emplace(name.substr(8), std::move(t));
    }
  }
  return out;
}

}  // namespace damnet
