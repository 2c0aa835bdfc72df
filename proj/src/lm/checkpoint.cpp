#include "bmi/lm/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "bmi/error.hpp"

namespace bmi::lm {

namespace {

constexpr char kMagic[] = "BMILAB1\n";

void put_le(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(b, 8);
}

double get_le(const unsigned char* b) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void write_checkpoint(std::ostream& out, const std::vector<const numerics::ParameterSet*>& sets) {
  out.write(kMagic, sizeof(kMagic) - 1);
  std::size_t offset = 0;
  for (const auto* set : sets)
    for (const auto* p : set->all()) {
      out << p->name << " " << p->value.rank();
      for (auto d : p->value.shape()) out << " " << d;
      out << " " << offset << "\n";
      offset += 8 * p->value.size();
    }
  out << "end\n";
  for (const auto* set : sets)
    for (const auto* p : set->all())
      for (double v : p->value.storage()) put_le(out, v);
  if (!out) throw CheckpointError("failed writing checkpoint");
}

void save_checkpoint(const std::string& path,
                     const std::vector<const numerics::ParameterSet*>& sets) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  write_checkpoint(out, sets);
}

TensorMap read_checkpoint(std::istream& in) {
  char magic[sizeof(kMagic) - 1];
  if (!in.read(magic, sizeof(magic)) || std::string(magic, sizeof(magic)) != kMagic)
    throw CheckpointError("bad checkpoint magic");
  struct Entry {
    std::string name;
    numerics::Shape shape;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  std::size_t total = 0;
  for (std::string line; std::getline(in, line);) {
    if (line == "end") break;
    std::istringstream ls(line);
    Entry e;
    std::size_t rank = 0;
    if (!(ls >> e.name >> rank) || rank < 1 || rank > 2)
      throw CheckpointError("bad manifest line: " + line);
    e.shape.resize(rank);
    for (auto& d : e.shape)
      if (!(ls >> d) || d == 0) throw CheckpointError("bad manifest shape: " + line);
    if (!(ls >> e.offset)) throw CheckpointError("bad manifest offset: " + line);
    total = std::max(total, e.offset + 8 * numerics::shape_size(e.shape));
    entries.push_back(std::move(e));
  }
  std::vector<unsigned char> payload(total);
  if (!in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(total)))
    throw CheckpointError("truncated checkpoint payload");
  TensorMap out;
  for (const auto& e : entries) {
    std::vector<double> v(numerics::shape_size(e.shape));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = get_le(payload.data() + e.offset + 8 * i);
    if (!out.emplace(e.name, numerics::Tensor(e.shape, std::move(v))).second)
      throw CheckpointError("duplicate tensor " + e.name);
  }
  return out;
}

TensorMap load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  return read_checkpoint(in);
}

void restore(numerics::ParameterSet& set, const TensorMap& tensors) {
  for (auto* p : set.all()) {
    auto it = tensors.find(p->name);
    if (it == tensors.end()) throw CheckpointError("checkpoint lacks " + p->name);
    if (it->second.shape() != p->value.shape())
      throw CheckpointError("shape mismatch for " + p->name + ": " +
                            numerics::shape_string(it->second.shape()) + " vs " +
                            numerics::shape_string(p->value.shape()));
  }
  for (auto* p : set.all()) p->value = tensors.at(p->name);
}

std::uint64_t parameter_hash(const numerics::ParameterSet& set) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  for (const auto* p : set.all()) {
    for (unsigned char c : p->name) mix(c);
    for (auto d : p->value.shape()) mix(d);
    for (double v : p->value.storage()) mix(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

}  // namespace bmi::lm
