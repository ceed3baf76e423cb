#include "dualpose/optim.hpp"

#include "json.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace dualpose::ad {

void adam_step(std::vector<Tensor>& params, AdamState& state) {
  if (state.first_moment.size() != params.size()) {
    state.first_moment.resize(params.size());
    state.second_moment.resize(params.size());
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& param = params[p];
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    if (m.empty()) {
      m.assign(param.numel(), 0.0);
      v.assign(param.numel(), 0.0);
    }
    if (m.size() != param.numel()) throw TensorError("adam_step: moment shape does not match parameter");
    const auto g = param.grad();
    if (g.empty()) continue;
    auto w = param.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

namespace {

constexpr char kMagic[4] = {'D', 'P', 'C', 'K'};

template <class T>
void write_pod(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw TensorError("checkpoint: truncated binary file");
  return value;
}

}  // namespace

void save_checkpoint(const std::string& prefix, const std::vector<NamedTensor>& tensors, std::int64_t step) {
  std::ofstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw TensorError("checkpoint: cannot write " + prefix + ".bin");
  nlohmann::json manifest;
  manifest["format"] = "dualpose-checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = "float64";
  manifest["step"] = step;
  manifest["tensors"] = nlohmann::json::array();

  bin.write(kMagic, 4);
  write_pod<std::uint32_t>(bin, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_pod<std::uint32_t>(bin, static_cast<std::uint32_t>(name.size()));
    bin.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(bin, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) write_pod<std::int64_t>(bin, d);
    const auto offset = static_cast<std::int64_t>(bin.tellp());
    bin.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
  }
  if (!bin) throw TensorError("checkpoint: write failed for " + prefix + ".bin");

  std::ofstream js(prefix + ".json");
  if (!js) throw TensorError("checkpoint: cannot write " + prefix + ".json");
  js << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::string& prefix) {
  std::ifstream js(prefix + ".json");
  if (!js) throw TensorError("checkpoint: cannot read " + prefix + ".json");
  nlohmann::json manifest;
  try {
    js >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw TensorError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  if (manifest.value("dtype", "") != "float64") throw TensorError("checkpoint: unsupported dtype");

  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw TensorError("checkpoint: cannot read " + prefix + ".bin");
  char magic[4];
  bin.read(magic, 4);
  if (!bin || std::memcmp(magic, kMagic, 4) != 0) throw TensorError("checkpoint: bad magic");
  const auto count = read_pod<std::uint32_t>(bin);
  if (count != manifest["tensors"].size()) throw TensorError("checkpoint: manifest/binary tensor count mismatch");

  Checkpoint ckpt;
  ckpt.step = manifest.value("step", std::int64_t{0});
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = read_pod<std::uint32_t>(bin);
    std::string name(name_len, '\0');
    bin.read(name.data(), name_len);
    const auto rank = read_pod<std::uint32_t>(bin);
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(read_pod<std::int64_t>(bin)));
    const auto& entry = manifest["tensors"][k];
    if (entry["name"] != name || entry["shape"].get<Shape>() != shape) {
      throw TensorError("checkpoint: manifest disagrees with binary for '" + name + "'");
    }
    std::vector<double> data(shape_numel(shape));
    bin.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!bin) throw TensorError("checkpoint: truncated data for '" + name + "'");
    ckpt.tensors.emplace_back(name, Tensor::from_data(shape, std::move(data)));
  }
  return ckpt;
}

void restore_parameters(const Checkpoint& ckpt, std::vector<NamedTensor>& params) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name[name] = &t;
  for (auto& [name, t] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw TensorError("checkpoint: missing parameter '" + name + "'");
    if (it->second->shape() != t.shape()) {
      throw TensorError("checkpoint: shape mismatch for '" + name + "': " + to_string(it->second->shape()) +
                        " vs " + to_string(t.shape()));
    }
    const auto src = it->second->data();
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
  }
}

}  // namespace dualpose::ad
