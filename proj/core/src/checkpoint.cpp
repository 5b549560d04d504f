#include "wrp/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "wrp/architecture.hpp"
#include "wrp/errors.hpp"

namespace wrp {

static_assert(std::endian::native == std::endian::little, "checkpoint payload is little-endian");

namespace {

constexpr char kMagic[8] = {'W', 'R', 'P', 'C', 'K', 'P', 'T', '1'};

void put(std::vector<NamedArray>& out, std::string name, const Tensor& t) {
  out.push_back({std::move(name), t.shape(), t.values()});
}

void put(std::vector<NamedArray>& out, std::string name, std::vector<double> v) {
  Shape shape{v.size()};
  out.push_back({std::move(name), std::move(shape), std::move(v)});
}

const NamedArray& need(const Checkpoint& c, const std::string& name) {
  const NamedArray* a = c.find(name);
  if (!a) throw FormatError("checkpoint lacks array '" + name + "'");
  return *a;
}

Tensor as_tensor(const NamedArray& a) { return Tensor(a.shape, a.data); }

}  // namespace

const NamedArray* Checkpoint::find(std::string_view name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

Checkpoint make_checkpoint(const Network& net, const OptState& state, std::string config_text) {
  Checkpoint c;
  c.architecture = architecture_string(net);
  c.input_shape = net.input_shape();
  c.config_text = std::move(config_text);
  c.step = state.step;
  c.epoch = state.epoch;
  c.switched = state.switched;

  std::size_t t = 0;
  for (const Layer& l : net.layers()) {
    if (l.kind == LayerKind::batchnorm) {
      put(c.arrays, l.name + ".scale", l.bn.scale);
      put(c.arrays, l.name + ".shift", l.bn.shift);
      put(c.arrays, l.name + ".running_mean", l.bn.running_mean);
      put(c.arrays, l.name + ".running_var", l.bn.running_var);
      put(c.arrays, l.name + ".meta",
          {l.bn.epsilon, l.bn.momentum, static_cast<double>(l.bn.updates)});
      continue;
    }
    if (!l.trainable()) continue;
    put(c.arrays, l.name + ".weights", l.params.weights);
    put(c.arrays, l.name + ".bias", l.params.bias);
    if (t < state.layers.size()) {
      const LayerOptState& s = state.layers[t];
      if (s.moments) {
        put(c.arrays, l.name + ".moments.mx", s.moments->mx);
        put(c.arrays, l.name + ".moments.mx2", s.moments->mx2);
        put(c.arrays, l.name + ".moments.mg2", s.moments->mg2);
        put(c.arrays, l.name + ".moments.meta",
            {s.moments->lambda, s.moments->initialized ? 1.0 : 0.0});
      }
      if (s.constants) {
        put(c.arrays, l.name + ".constants.mu", s.constants->mu);
        put(c.arrays, l.name + ".constants.alpha2", s.constants->alpha2);
        put(c.arrays, l.name + ".constants.beta2", s.constants->beta2);
      }
      if (s.rms_weights) {
        put(c.arrays, l.name + ".rms_weights", s.rms_weights->r);
        put(c.arrays, l.name + ".rms_weights.lambda", {s.rms_weights->lambda});
      }
      if (s.rms_bias) {
        put(c.arrays, l.name + ".rms_bias", s.rms_bias->r);
        put(c.arrays, l.name + ".rms_bias.lambda", {s.rms_bias->lambda});
      }
    }
    ++t;
  }
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  nlohmann::json manifest;
  manifest["format"] = "wrp-checkpoint";
  manifest["version"] = 1;
  manifest["architecture"] = c.architecture;
  manifest["input_shape"] = c.input_shape;
  manifest["config"] = c.config_text;
  manifest["step"] = c.step;
  manifest["epoch"] = c.epoch;
  manifest["switched"] = c.switched;
  manifest["arrays"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& a : c.arrays) {
    if (shape_size(a.shape) != a.data.size())
      throw DimensionError("array '" + a.name + "' shape disagrees with its data");
    manifest["arrays"].push_back(
        {{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", a.data.size()}});
    offset += a.data.size();
  }
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : c.arrays)
    out.write(reinterpret_cast<const char*>(a.data.data()),
              static_cast<std::streamsize>(a.data.size() * sizeof(double)));
  if (!out) throw FormatError("short write to " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  const std::vector<char> bytes{std::istreambuf_iterator<char>(in),
                                std::istreambuf_iterator<char>()};
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw FormatError(path.string() + ": not a checkpoint");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof len);
  if (len > bytes.size() - 16) throw FormatError(path.string() + ": truncated manifest");

  nlohmann::json m;
  try {
    m = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
  const std::size_t payload = bytes.size() - 16 - len;
  const char* base = bytes.data() + 16 + len;

  Checkpoint c;
  try {
    if (m.at("format") != "wrp-checkpoint" || m.at("version") != 1)
      throw FormatError("unsupported checkpoint format");
    c.architecture = m.at("architecture").get<std::string>();
    c.input_shape = m.at("input_shape").get<Shape>();
    c.config_text = m.at("config").get<std::string>();
    c.step = m.at("step").get<std::size_t>();
    c.epoch = m.at("epoch").get<std::size_t>();
    c.switched = m.at("switched").get<bool>();
    for (const auto& entry : m.at("arrays")) {
      NamedArray a;
      a.name = entry.at("name").get<std::string>();
      a.shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      if (shape_size(a.shape) != count || (offset + count) * sizeof(double) > payload)
        throw FormatError("checkpoint array '" + a.name + "' out of bounds");
      a.data.resize(count);
      std::memcpy(a.data.data(), base + offset * sizeof(double), count * sizeof(double));
      c.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
  return c;
}

Network restore_network(const Checkpoint& c) {
  Network net = parse_architecture(c.architecture, c.input_shape);
  for (Layer& l : net.layers()) {
    if (l.kind == LayerKind::batchnorm) {
      l.bn.scale = as_tensor(need(c, l.name + ".scale"));
      l.bn.shift = as_tensor(need(c, l.name + ".shift"));
      l.bn.running_mean = as_tensor(need(c, l.name + ".running_mean"));
      l.bn.running_var = as_tensor(need(c, l.name + ".running_var"));
      const auto& meta = need(c, l.name + ".meta").data;
      if (meta.size() != 3) throw FormatError(l.name + ".meta needs 3 entries");
      l.bn.epsilon = meta[0];
      l.bn.momentum = meta[1];
      l.bn.updates = static_cast<std::size_t>(meta[2]);
    } else if (l.trainable()) {
      Tensor w = as_tensor(need(c, l.name + ".weights"));
      Tensor b = as_tensor(need(c, l.name + ".bias"));
      if (w.shape() != l.params.weights.shape() || b.shape() != l.params.bias.shape())
        throw FormatError("checkpoint shapes disagree with layer " + l.name);
      l.params.weights = std::move(w);
      l.params.bias = std::move(b);
    }
  }
  return net;
}

OptState restore_opt_state(const Checkpoint& c, const Network& net) {
  OptState s;
  s.step = c.step;
  s.epoch = c.epoch;
  s.switched = c.switched;
  for (const Layer& l : net.layers()) {
    if (!l.trainable()) continue;
    LayerOptState ls;
    if (const NamedArray* meta = c.find(l.name + ".moments.meta")) {
      MomentState m(meta->data.at(0));
      m.initialized = meta->data.at(1) != 0.0;
      m.mx = need(c, l.name + ".moments.mx").data;
      m.mx2 = need(c, l.name + ".moments.mx2").data;
      m.mg2 = need(c, l.name + ".moments.mg2").data;
      ls.moments = std::move(m);
    }
    if (c.find(l.name + ".constants.mu")) {
      ReparamConstants k;
      k.mu = need(c, l.name + ".constants.mu").data;
      k.alpha2 = need(c, l.name + ".constants.alpha2").data;
      k.beta2 = need(c, l.name + ".constants.beta2").data;
      ls.constants = std::move(k);
    }
    if (const NamedArray* r = c.find(l.name + ".rms_weights")) {
      RmsState st(r->data.size(), need(c, l.name + ".rms_weights.lambda").data.at(0));
      st.r = r->data;
      ls.rms_weights = std::move(st);
    }
    if (const NamedArray* r = c.find(l.name + ".rms_bias")) {
      RmsState st(r->data.size(), need(c, l.name + ".rms_bias.lambda").data.at(0));
      st.r = r->data;
      ls.rms_bias = std::move(st);
    }
    s.layers.push_back(std::move(ls));
  }
  return s;
}

}  // namespace wrp
