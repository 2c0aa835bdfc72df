#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "bmi/numerics/graph.hpp"

namespace bmi::lm {

using TensorMap = std::map<std::string, numerics::Tensor>;

// Container layout: "BMILAB1\n", a text manifest with one
// "<name> <rank> <dims...> <byte offset>" line per tensor ended by "end\n",
// then the little-endian float64 payload.
void write_checkpoint(std::ostream& out, const std::vector<const numerics::ParameterSet*>& sets);
void save_checkpoint(const std::string& path,
                     const std::vector<const numerics::ParameterSet*>& sets);
TensorMap read_checkpoint(std::istream& in);
TensorMap load_checkpoint(const std::string& path);

// Copies every parameter of `set` from the map; missing names or shape
// mismatches throw CheckpointError.
void restore(numerics::ParameterSet& set, const TensorMap& tensors);

// FNV-1a over names, shapes and value bits.
std::uint64_t parameter_hash(const numerics::ParameterSet& set);

}  // namespace bmi::lm
