#include "evg/checkpoint.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <string_view>

#include "evg/errors.hpp"

namespace evg {

namespace {

constexpr std::string_view kMagic = "TEA1";

// Model-owned keys; anything else passes through as metadata.
constexpr const char* kModelKeys[] = {"input_dim",     "layer_dims", "hidden_dim",  "head_dims",
                                      "num_classes",   "pool_after", "keep_ratio",  "use_edge_gate",
                                      "seed",          "pool_input", "bn_momentum", "bn_eps"};

bool is_model_key(const std::string& k) {
  for (const char* m : kModelKeys)
    if (k == m) return true;
  return false;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

const std::string& require(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw Error(Errc::InvalidSpec, "checkpoint lacks key '" + key + "'");
  return it->second;
}

std::uint64_t to_uint(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(Errc::InvalidSpec, "checkpoint key '" + key + "' is not an unsigned integer: " + text);
  }
  return v;
}

double to_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(Errc::InvalidSpec, "checkpoint key '" + key + "' is not a number: " + text);
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  if (text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_uint(key, item));
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

const std::string* Checkpoint::find(const std::string& key) const {
  auto it = meta.find(key);
  return it == meta.end() ? nullptr : &it->second;
}

Bytes serialize_checkpoint(const Checkpoint& ckpt) {
  const auto& c = ckpt.model.config;
  std::map<std::string, std::string> kv = ckpt.meta;
  for (const auto& [k, v] : ckpt.meta) {
    if (is_model_key(k)) throw Error(Errc::InvalidSpec, "metadata key '" + k + "' is reserved");
    if (k.find('=') != std::string::npos || k.empty()) throw Error(Errc::InvalidSpec, "bad metadata key '" + k + "'");
  }
  kv["input_dim"] = std::to_string(c.input_dim);
  kv["layer_dims"] = join(c.layer_dims);
  kv["hidden_dim"] = std::to_string(c.hidden_dim);
  kv["head_dims"] = join(c.head_dims);
  kv["num_classes"] = std::to_string(c.num_classes);
  kv["pool_after"] = join(c.pool_after);
  kv["keep_ratio"] = format_double(c.keep_ratio);
  kv["use_edge_gate"] = c.use_edge_gate ? "1" : "0";
  kv["seed"] = std::to_string(c.seed);
  kv["pool_input"] = "post_activation";
  if (!ckpt.model.layers.empty()) {
    kv["bn_momentum"] = format_double(ckpt.model.layers.front().bn.momentum);
    kv["bn_eps"] = format_double(ckpt.model.layers.front().bn.eps);
  }

  Bytes out;
  ByteWriter w(out);
  w.put_magic(kMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(kv.size()));
  for (const auto& [k, v] : kv) {
    const std::string line = k + "=" + v;
    w.put<std::uint32_t>(static_cast<std::uint32_t>(line.size()));
    w.put_bytes(std::span(reinterpret_cast<const std::uint8_t*>(line.data()), line.size()));
  }
  const auto tensors = ckpt.model.state();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const ad::Tensor* t : tensors) {
    w.put<std::uint32_t>(2);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t->rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t->cols()));
    for (double v : t->data()) w.put<double>(v);
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic(kMagic);
  const auto lines = r.get<std::uint32_t>();
  std::map<std::string, std::string> kv;
  for (std::uint32_t i = 0; i < lines; ++i) {
    const auto len = r.get<std::uint32_t>();
    auto raw = r.get_bytes(len);
    std::string line(raw.begin(), raw.end());
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(Errc::InvalidSpec, "checkpoint line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }

  tea::ModelConfig c;
  c.input_dim = to_uint("input_dim", require(kv, "input_dim"));
  c.layer_dims = to_list("layer_dims", require(kv, "layer_dims"));
  c.hidden_dim = to_uint("hidden_dim", require(kv, "hidden_dim"));
  c.head_dims = to_list("head_dims", require(kv, "head_dims"));
  c.num_classes = to_uint("num_classes", require(kv, "num_classes"));
  c.pool_after = to_list("pool_after", require(kv, "pool_after"));
  c.keep_ratio = to_double("keep_ratio", require(kv, "keep_ratio"));
  c.use_edge_gate = require(kv, "use_edge_gate") == "1";
  c.seed = to_uint("seed", require(kv, "seed"));

  Checkpoint ckpt;
  ckpt.model = tea::ModelParams::init(c);
  for (auto& layer : ckpt.model.layers) {
    if (auto it = kv.find("bn_momentum"); it != kv.end()) layer.bn.momentum = to_double("bn_momentum", it->second);
    if (auto it = kv.find("bn_eps"); it != kv.end()) layer.bn.eps = to_double("bn_eps", it->second);
  }

  auto tensors = ckpt.model.state();
  const auto count = r.get<std::uint32_t>();
  if (count != tensors.size()) {
    throw Error(Errc::ShapeMismatch, "checkpoint holds " + std::to_string(count) + " tensors, model needs " +
                                         std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < count; ++i) {
    const auto rank = r.get<std::uint32_t>();
    if (rank != 2) throw Error(Errc::ShapeMismatch, "tensor " + std::to_string(i) + " has rank " + std::to_string(rank));
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    ad::Tensor& t = *tensors[i];
    if (rows != t.rows() || cols != t.cols()) {
      throw Error(Errc::ShapeMismatch, "tensor " + std::to_string(i) + " is " + std::to_string(rows) + "x" +
                                           std::to_string(cols) + ", expected " + std::to_string(t.rows()) + "x" +
                                           std::to_string(t.cols()));
    }
    for (double& v : t.values()) v = r.get<double>();
  }
  if (r.remaining() != 0) throw Error(Errc::MalformedRecord, "trailing bytes after checkpoint tensors");

  for (auto& [k, v] : kv)
    if (!is_model_key(k)) ckpt.meta[k] = v;
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) { write_file(path, serialize_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace evg
