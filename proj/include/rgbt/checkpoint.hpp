#pragma once

// Versioned key -> array container used for pretrained backbones and model
// checkpoints.
//
// Layout (little-endian):
//   magic   8 bytes  "RGBTARR1"
//   version u32      (currently 1)
//   meta    u32 length + UTF-8 JSON text (may be empty)
//   count   u32
//   count x { u32 key length, key bytes, u32 rank, rank x i64 dims,
//             prod(dims) x f64 values }

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rgbt/network.hpp"

namespace rgbt {

inline constexpr std::uint32_t kArrayStoreVersion = 1;

class ArrayStore {
 public:
  struct Array {
    std::vector<std::int64_t> dims;
    std::vector<double> values;
  };

  std::string metadata;

  void put(const std::string& key, Array a) { arrays_[key] = std::move(a); }
  const Array* find(const std::string& key) const;
  const std::map<std::string, Array>& arrays() const { return arrays_; }

  /// Writes to a temporary sibling and renames it into place.
  void save(const std::string& path) const;
  static ArrayStore load(const std::string& path);

 private:
  std::map<std::string, Array> arrays_;
};

template <typename T>
ArrayStore::Array to_array(const Tensor<T>& t);

/// Copies `a` into `t`; throws LoadError when the element counts differ.
template <typename T>
void from_array(const ArrayStore::Array& a, Tensor<T>& t,
                const std::string& key);

/// Stores every parameter and buffer plus the model config and domain count
/// as metadata.
template <typename T>
void save_checkpoint(const NetworkParams<T>& net, const std::string& path);

template <typename T>
NetworkParams<T> load_checkpoint(const std::string& path);

}  // namespace rgbt
