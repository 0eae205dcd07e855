#pragma once

#include <map>
#include <string>
#include <vector>

#include "ldp/tensor.hpp"

namespace ldp {

// One float32 array inside an artifact file. Payload order follows the order
// of the arrays vector.
struct NamedArray {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
};

struct Artifact {
    std::string kind;                         // "autoencoder", "diffusion", "detector", "patch"
    std::vector<NamedArray> arrays;           // payload order
    std::map<std::string, std::string> meta;  // config snapshot, seed, ...
};

// On-disk layout, bit-exact:
//   bytes 0..7    magic "LDPART01"
//   bytes 8..15   header length (little-endian uint64)
//   header        UTF-8 JSON: {"arrays":[{"name","shape"},...],"kind",...,"meta":{...}}
//   payload       concatenated little-endian IEEE-754 binary32 arrays, header order
void save_artifact(const std::string& path, const Artifact& artifact);
void save_artifact(const std::string& path, const std::string& kind,
                   const std::vector<NamedArray>& arrays,
                   const std::map<std::string, std::string>& meta);

Artifact load_artifact(const std::string& path);

// Bridges between double tensors used in compute and the f32 storage format.
NamedArray to_named_array(const std::string& name, const Tensor& t);
Tensor to_tensor(const NamedArray& a);

// Lookup by name; throws if absent.
const NamedArray& find_array(const Artifact& a, const std::string& name);

}  // namespace ldp
