#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evg/bytes.hpp"
#include "evg/events.hpp"

namespace evg {

/// G1: directed, (x, y, p) features. G2: as G1 but undirected. G3: (x, y)
/// only. G4: p only. Radius tags the spatio-temporal radius baseline.
enum class Variant : std::uint8_t { G1 = 1, G2 = 2, G3 = 3, G4 = 4, Radius = 5 };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

/// Feature width for a variant: 3, 3, 2, 1 (radius graphs use G1 features).
std::size_t feature_dim(Variant v);

struct GraphConfig {
  Variant variant = Variant::G1;
  std::uint32_t tau = 1;
  /// Coordinate divisor; max(sensor width, height) when unset.
  std::optional<double> spatial_norm;
  /// Microsecond divisor for beta; the stream's duration when unset.
  std::optional<double> temporal_norm;

  void validate() const;
};

struct Edge {
  std::uint32_t src = 0;
  std::uint32_t dst = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Node table plus edges ordered by (src, dst). Features and edge attributes
/// are kept in single precision, the precision they are serialized at.
struct EventGraph {
  Variant variant = Variant::G1;
  std::uint32_t tau = 1;
  bool directed = true;
  std::size_t num_nodes = 0;
  std::size_t feature_dim = 0;
  std::vector<float> features;                          // num_nodes x feature_dim
  std::vector<std::array<std::uint16_t, 2>> positions;  // raw pixel (x, y)
  std::vector<Edge> edges;
  std::vector<std::array<float, 2>> edge_attrs;  // (alpha, beta) per edge
  std::optional<int> label;

  /// Norms actually used at construction; not serialized.
  double spatial_norm = 1.0;
  double temporal_norm = 1.0;

  float feature(std::size_t node, std::size_t col) const { return features[node * feature_dim + col]; }

  /// Equality over the serialized content (norms are excluded).
  bool same_content(const EventGraph& other) const;
};

struct GraphStats {
  std::size_t num_nodes = 0;
  std::size_t num_edges = 0;
  std::size_t num_chain_edges = 0;
  std::size_t num_same_pos_edges = 0;
  std::size_t serialized_size_bytes = 0;
};

/// Chain edges i-1 -> i plus, for each node, edges to the next up to tau
/// later events at the same pixel. A same-pixel successor that is also the
/// chain neighbour yields a single (chain) edge.
EventGraph build_graph(const EventStream& stream, const GraphConfig& cfg);

/// Undirected baseline: i -- j when the distance in normalized (x, y, t)
/// space is at most `radius`. Candidate pairs are admitted nearest first
/// while both endpoints have fewer than max_degree edges.
EventGraph build_radius_graph(const EventStream& stream, double radius, std::uint32_t max_degree,
                              std::optional<double> spatial_norm = std::nullopt,
                              std::optional<double> temporal_norm = std::nullopt);

GraphStats graph_stats(const EventGraph& g);

/// GRF1: "GRF1", u8 variant, u8 directed, u16 tau, u32 M, u32 |E|, u8 d0,
/// M*d0 f32 features, M*2 u16 positions, (M+1) u32 CSR offsets, |E| u32
/// destinations, |E|*2 f32 attributes, optional u16 label.
Bytes serialize_graph(const EventGraph& g);
EventGraph deserialize_graph(std::span<const std::uint8_t> bytes);

std::size_t serialized_graph_size(std::size_t nodes, std::size_t edges, std::size_t feature_dim, bool labeled);

}  // namespace evg
