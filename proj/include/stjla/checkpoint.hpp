#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stjla/optim.hpp"

namespace stjla {

struct NamedArray {
  std::string name;
  Shape shape;
  Vector data;
};

/// In-memory image of a checkpoint file. See docs/checkpoint_format.md.
struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<NamedArray> arrays;
  std::optional<AdamState> optimizer;

  const NamedArray* find(const std::string& name) const;
  std::optional<std::string> meta(const std::string& key) const;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies every parameter of `params` into `ckpt.arrays`, in order.
void append_parameters(Checkpoint& ckpt, const ParameterSet& params);
/// Overwrites parameter values from matching arrays; throws on a missing
/// name or a shape mismatch.
void load_parameters(const Checkpoint& ckpt, const ParameterSet& params);

}  // namespace stjla
