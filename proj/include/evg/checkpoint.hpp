#pragma once

#include <map>
#include <string>

#include "evg/bytes.hpp"
#include "evg/tea.hpp"

namespace evg {

/// A trained model plus free-form metadata (graph settings, window size, ...).
///
/// On disk: magic "TEA1", u32 line count, each line a u32 length and UTF-8
/// `key=value`, then u32 tensor count and per tensor u32 rank (always 2),
/// u32 rows, u32 cols and row-major f64 values. Tensors follow
/// ModelParams::state() order.
struct Checkpoint {
  tea::ModelParams model;
  std::map<std::string, std::string> meta;

  const std::string* find(const std::string& key) const;
};

Bytes serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace evg
