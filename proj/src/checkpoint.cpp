#include "rgbt/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "rgbt/errors.hpp"

namespace rgbt {

namespace {

constexpr char kMagic[8] = {'R', 'G', 'B', 'T', 'A', 'R', 'R', '1'};

template <typename V>
void put_raw(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get_raw(std::istream& is, const std::string& path) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw LoadError(path + ": truncated file");
  return v;
}

std::string get_string(std::istream& is, std::uint32_t len,
                       const std::string& path) {
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw LoadError(path + ": truncated file");
  return s;
}

}  // namespace

const ArrayStore::Array* ArrayStore::find(const std::string& key) const {
  auto it = arrays_.find(key);
  return it == arrays_.end() ? nullptr : &it->second;
}

void ArrayStore::save(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw LoadError(tmp + ": cannot open for writing");
    os.write(kMagic, sizeof(kMagic));
    put_raw<std::uint32_t>(os, kArrayStoreVersion);
    put_raw<std::uint32_t>(os, static_cast<std::uint32_t>(metadata.size()));
    os.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
    put_raw<std::uint32_t>(os, static_cast<std::uint32_t>(arrays_.size()));
    for (const auto& [key, a] : arrays_) {
      put_raw<std::uint32_t>(os, static_cast<std::uint32_t>(key.size()));
      os.write(key.data(), static_cast<std::streamsize>(key.size()));
      put_raw<std::uint32_t>(os, static_cast<std::uint32_t>(a.dims.size()));
      for (auto d : a.dims) put_raw<std::int64_t>(os, d);
      os.write(reinterpret_cast<const char*>(a.values.data()),
               static_cast<std::streamsize>(a.values.size() * sizeof(double)));
    }
    if (!os) throw LoadError(tmp + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

ArrayStore ArrayStore::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError(path + ": cannot open");
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw LoadError(path + ": not an array store");
  }
  const auto version = get_raw<std::uint32_t>(is, path);
  if (version != kArrayStoreVersion) {
    throw LoadError(path + ": unsupported version " + std::to_string(version));
  }
  ArrayStore store;
  store.metadata = get_string(is, get_raw<std::uint32_t>(is, path), path);
  const auto count = get_raw<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string key = get_string(is, get_raw<std::uint32_t>(is, path), path);
    Array a;
    const auto rank = get_raw<std::uint32_t>(is, path);
    std::int64_t total = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      a.dims.push_back(get_raw<std::int64_t>(is, path));
      if (a.dims.back() < 0) throw LoadError(path + ": negative dim in " + key);
      total *= a.dims.back();
    }
    a.values.resize(static_cast<std::size_t>(total));
    is.read(reinterpret_cast<char*>(a.values.data()),
            static_cast<std::streamsize>(total * sizeof(double)));
    if (!is) throw LoadError(path + ": truncated array " + key);
    store.put(key, std::move(a));
  }
  return store;
}

template <typename T>
ArrayStore::Array to_array(const Tensor<T>& t) {
  const Shape& s = t.shape();
  ArrayStore::Array a;
  a.dims = {s.n, s.c, s.h, s.w};
  a.values.assign(t.span().begin(), t.span().end());
  return a;
}

template <typename T>
void from_array(const ArrayStore::Array& a, Tensor<T>& t,
                const std::string& key) {
  if (a.values.size() != t.size()) {
    throw LoadError(key + ": expected " + std::to_string(t.size()) +
                    " values, found " + std::to_string(a.values.size()));
  }
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(a.values[i]);
}

template <typename T>
void save_checkpoint(const NetworkParams<T>& net, const std::string& path) {
  ArrayStore store;
  nlohmann::json meta;
  meta["model"] = nlohmann::json::parse(to_json_string(net.config));
  meta["num_domains"] = net.num_domains();
  store.metadata = meta.dump();
  for (const auto* p : net.parameters()) store.put(p->name, to_array(p->value));
  for (const auto& [k, v] : net.buffers()) store.put(k, to_array(*v));
  store.save(path);
}

template <typename T>
NetworkParams<T> load_checkpoint(const std::string& path) {
  const ArrayStore store = ArrayStore::load(path);
  ModelConfig config;
  int domains = 1;
  try {
    const auto meta = nlohmann::json::parse(store.metadata);
    config = model_config_from_json_string(meta.at("model").dump());
    domains = meta.at("num_domains").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path + ": bad metadata: " + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(path + ": " + e.what());
  }
  NetworkParams<T> net = build_network<T>(config, std::max(domains, 1), 0);
  for (auto* p : net.parameters()) {
    const auto* a = store.find(p->name);
    if (!a) throw LoadError(path + ": missing key " + p->name);
    from_array(*a, p->value, p->name);
  }
  for (auto& [k, v] : net.buffers()) {
    const auto* a = store.find(k);
    if (!a) throw LoadError(path + ": missing key " + k);
    from_array(*a, *v, k);
  }
  return net;
}

template ArrayStore::Array to_array(const Tensor<float>&);
template ArrayStore::Array to_array(const Tensor<double>&);
template void from_array(const ArrayStore::Array&, Tensor<float>&,
                         const std::string&);
template void from_array(const ArrayStore::Array&, Tensor<double>&,
                         const std::string&);
template void save_checkpoint(const NetworkParams<float>&, const std::string&);
template void save_checkpoint(const NetworkParams<double>&,
                              const std::string&);
template NetworkParams<float> load_checkpoint<float>(const std::string&);
template NetworkParams<double> load_checkpoint<double>(const std::string&);

}  // namespace rgbt
