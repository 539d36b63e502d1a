#include "evg/graph.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>
#include <unordered_map>

namespace evg {

namespace {

constexpr std::string_view kGraphMagic = "GRF1";

double resolve_spatial_norm(const EventStream& s, std::optional<double> norm) {
  if (norm) return *norm;
  return static_cast<double>(std::max({s.sensor.width, s.sensor.height, 1u}));
}

double resolve_temporal_norm(const EventStream& s, std::optional<double> norm) {
  if (norm) return *norm;
  const auto span = s.duration_us();
  return span > 0 ? static_cast<double>(span) : 1.0;
}

void check_norm(std::optional<double> norm, const char* what) {
  if (norm && !(*norm > 0.0 && std::isfinite(*norm))) {
    throw Error(Errc::Precondition, std::string(what) + " must be positive");
  }
}

double pixel_distance(const Event& a, const Event& b) {
  const double dx = static_cast<double>(a.x) - static_cast<double>(b.x);
  const double dy = static_cast<double>(a.y) - static_cast<double>(b.y);
  return std::sqrt(dx * dx + dy * dy);
}

double time_gap(const Event& a, const Event& b) {
  return static_cast<double>(a.t > b.t ? a.t - b.t : b.t - a.t);
}

void fill_nodes(EventGraph& g, const EventStream& stream, Variant feature_variant) {
  g.num_nodes = stream.size();
  g.feature_dim = feature_dim(feature_variant);
  g.features.resize(g.num_nodes * g.feature_dim);
  g.positions.resize(g.num_nodes);
  const double inv = 1.0 / g.spatial_norm;
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    const auto& e = stream.events[i];
    g.positions[i] = {static_cast<std::uint16_t>(e.x), static_cast<std::uint16_t>(e.y)};
    float* row = g.features.data() + i * g.feature_dim;
    switch (feature_variant) {
      case Variant::G1:
      case Variant::G2:
      case Variant::Radius:
        row[0] = static_cast<float>(e.x * inv);
        row[1] = static_cast<float>(e.y * inv);
        row[2] = static_cast<float>(e.p);
        break;
      case Variant::G3:
        row[0] = static_cast<float>(e.x * inv);
        row[1] = static_cast<float>(e.y * inv);
        break;
      case Variant::G4:
        row[0] = static_cast<float>(e.p);
        break;
    }
  }
}

void add_edge(EventGraph& g, const EventStream& s, std::uint32_t src, std::uint32_t dst) {
  const auto& a = s.events[src];
  const auto& b = s.events[dst];
  g.edges.push_back({src, dst});
  g.edge_attrs.push_back({static_cast<float>(pixel_distance(a, b) / g.spatial_norm),
                          static_cast<float>(time_gap(a, b) / g.temporal_norm)});
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::G1: return "g1";
    case Variant::G2: return "g2";
    case Variant::G3: return "g3";
    case Variant::G4: return "g4";
    case Variant::Radius: return "radius";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (auto v : {Variant::G1, Variant::G2, Variant::G3, Variant::G4, Variant::Radius}) {
    if (variant_name(v) == name) return v;
  }
  throw Error(Errc::InvalidSpec, "unknown graph variant '" + name + "'");
}

std::size_t feature_dim(Variant v) {
  switch (v) {
    case Variant::G3: return 2;
    case Variant::G4: return 1;
    default: return 3;
  }
}

void GraphConfig::validate() const {
  if (tau < 1) throw Error(Errc::Precondition, "temporal degree tau must be >= 1");
  if (variant == Variant::Radius) throw Error(Errc::Precondition, "use build_radius_graph for the radius baseline");
  check_norm(spatial_norm, "spatial_norm");
  check_norm(temporal_norm, "temporal_norm");
}

bool EventGraph::same_content(const EventGraph& o) const {
  return variant == o.variant && tau == o.tau && directed == o.directed && num_nodes == o.num_nodes &&
         feature_dim == o.feature_dim && features == o.features && positions == o.positions && edges == o.edges &&
         edge_attrs == o.edge_attrs && label == o.label;
}

EventGraph build_graph(const EventStream& stream, const GraphConfig& cfg) {
  cfg.validate();
  if (stream.empty()) throw Error(Errc::EmptyStream, "cannot build a graph from an empty stream");

  EventGraph g;
  g.variant = cfg.variant;
  g.tau = cfg.tau;
  g.directed = cfg.variant != Variant::G2;
  g.label = stream.label;
  g.spatial_norm = resolve_spatial_norm(stream, cfg.spatial_norm);
  g.temporal_norm = resolve_temporal_norm(stream, cfg.temporal_norm);
  fill_nodes(g, stream, cfg.variant);

  const std::size_t k = stream.size();
  // next_same[i]: index of the next later event at the same pixel, or k.
  std::vector<std::uint32_t> next_same(k, static_cast<std::uint32_t>(k));
  std::unordered_map<std::uint64_t, std::uint32_t> last_seen;
  last_seen.reserve(k);
  for (std::size_t i = k; i-- > 0;) {
    const auto& e = stream.events[i];
    const std::uint64_t key = (static_cast<std::uint64_t>(e.y) << 32) | e.x;
    auto [it, inserted] = last_seen.try_emplace(key, static_cast<std::uint32_t>(i));
    if (!inserted) {
      next_same[i] = it->second;
      it->second = static_cast<std::uint32_t>(i);
    }
  }

  g.edges.reserve(k * (1 + cfg.tau));
  g.edge_attrs.reserve(k * (1 + cfg.tau));
  for (std::uint32_t i = 0; i < k; ++i) {
    if (i + 1 < k) add_edge(g, stream, i, i + 1);
    std::uint32_t j = next_same[i];
    for (std::uint32_t hop = 0; hop < cfg.tau && j < k; ++hop, j = next_same[j]) {
      if (j != i + 1) add_edge(g, stream, i, j);
    }
  }
  return g;
}

EventGraph build_radius_graph(const EventStream& stream, double radius, std::uint32_t max_degree,
                              std::optional<double> spatial_norm, std::optional<double> temporal_norm) {
  if (!(radius > 0.0)) throw Error(Errc::Precondition, "radius must be positive");
  if (max_degree < 1) throw Error(Errc::Precondition, "max_degree must be positive");
  check_norm(spatial_norm, "spatial_norm");
  check_norm(temporal_norm, "temporal_norm");
  if (stream.empty()) throw Error(Errc::EmptyStream, "cannot build a graph from an empty stream");

  EventGraph g;
  g.variant = Variant::Radius;
  g.tau = 0;
  g.directed = false;
  g.label = stream.label;
  g.spatial_norm = resolve_spatial_norm(stream, spatial_norm);
  g.temporal_norm = resolve_temporal_norm(stream, temporal_norm);
  fill_nodes(g, stream, Variant::Radius);

  const std::size_t k = stream.size();
  struct Candidate {
    double dist;
    std::uint32_t i, j;
  };
  std::vector<Candidate> candidates;
  const double r2 = radius * radius;
  for (std::uint32_t i = 0; i < k; ++i) {
    const auto& a = stream.events[i];
    for (std::uint32_t j = i + 1; j < k; ++j) {
      const auto& b = stream.events[j];
      const double dx = (static_cast<double>(a.x) - b.x) / g.spatial_norm;
      const double dy = (static_cast<double>(a.y) - b.y) / g.spatial_norm;
      const double dt = time_gap(a, b) / g.temporal_norm;
      const double d2 = dx * dx + dy * dy + dt * dt;
      if (d2 <= r2) candidates.push_back({d2, i, j});
    }
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) { return std::tie(a.dist, a.i, a.j) < std::tie(b.dist, b.i, b.j); });
  std::vector<std::uint32_t> degree(k, 0);
  std::vector<Edge> kept;
  for (const auto& c : candidates) {
    if (degree[c.i] < max_degree && degree[c.j] < max_degree) {
      ++degree[c.i];
      ++degree[c.j];
      kept.push_back({c.i, c.j});
    }
  }
  std::sort(kept.begin(), kept.end());
  g.edges.reserve(kept.size());
  g.edge_attrs.reserve(kept.size());
  for (const auto& e : kept) add_edge(g, stream, e.src, e.dst);
  return g;
}

std::size_t serialized_graph_size(std::size_t nodes, std::size_t edges, std::size_t feature_dim, bool labeled) {
  return 4 + 1 + 1 + 2 + 4 + 4 + 1 + nodes * feature_dim * 4 + nodes * 2 * 2 + (nodes + 1) * 4 + edges * 4 +
         edges * 2 * 4 + (labeled ? 2 : 0);
}

GraphStats graph_stats(const EventGraph& g) {
  GraphStats s;
  s.num_nodes = g.num_nodes;
  s.num_edges = g.edges.size();
  if (g.variant != Variant::Radius) {
    for (const auto& e : g.edges) {
      if (e.dst == e.src + 1) ++s.num_chain_edges;
    }
    s.num_same_pos_edges = s.num_edges - s.num_chain_edges;
  }
  s.serialized_size_bytes = serialized_graph_size(g.num_nodes, g.edges.size(), g.feature_dim, g.label.has_value());
  return s;
}

Bytes serialize_graph(const EventGraph& g) {
  for (std::size_t i = 1; i < g.edges.size(); ++i) {
    if (g.edges[i].src < g.edges[i - 1].src) throw Error(Errc::Precondition, "edges must be grouped by source");
  }
  Bytes out;
  out.reserve(serialized_graph_size(g.num_nodes, g.edges.size(), g.feature_dim, g.label.has_value()));
  ByteWriter w(out);
  w.put_magic(kGraphMagic);
  w.put(static_cast<std::uint8_t>(g.variant));
  w.put(static_cast<std::uint8_t>(g.directed ? 1 : 0));
  w.put(static_cast<std::uint16_t>(g.tau));
  w.put(static_cast<std::uint32_t>(g.num_nodes));
  w.put(static_cast<std::uint32_t>(g.edges.size()));
  w.put(static_cast<std::uint8_t>(g.feature_dim));
  for (float f : g.features) w.put(f);
  for (const auto& p : g.positions) {
    w.put(p[0]);
    w.put(p[1]);
  }
  std::uint32_t offset = 0;
  std::size_t cursor = 0;
  for (std::size_t node = 0; node <= g.num_nodes; ++node) {
    while (cursor < g.edges.size() && g.edges[cursor].src < node) ++cursor, ++offset;
    w.put(offset);
  }
  for (const auto& e : g.edges) w.put(e.dst);
  for (const auto& a : g.edge_attrs) {
    w.put(a[0]);
    w.put(a[1]);
  }
  if (g.label) w.put(static_cast<std::uint16_t>(*g.label));
  return out;
}

EventGraph deserialize_graph(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.expect_magic(kGraphMagic);
  EventGraph g;
  const auto variant = in.get<std::uint8_t>();
  if (variant < 1 || variant > 5) throw Error(Errc::MalformedRecord, "unknown variant tag " + std::to_string(variant));
  g.variant = static_cast<Variant>(variant);
  g.directed = in.get<std::uint8_t>() != 0;
  g.tau = in.get<std::uint16_t>();
  g.num_nodes = in.get<std::uint32_t>();
  const std::size_t num_edges = in.get<std::uint32_t>();
  g.feature_dim = in.get<std::uint8_t>();
  const std::size_t body = serialized_graph_size(g.num_nodes, num_edges, g.feature_dim, false) - in.position();
  if (in.remaining() < body) throw Error(Errc::TruncatedPayload, "graph body shorter than header declares");

  g.features.resize(g.num_nodes * g.feature_dim);
  for (auto& f : g.features) f = in.get<float>();
  g.positions.resize(g.num_nodes);
  for (auto& p : g.positions) {
    p[0] = in.get<std::uint16_t>();
    p[1] = in.get<std::uint16_t>();
  }
  std::vector<std::uint32_t> offsets(g.num_nodes + 1);
  for (auto& o : offsets) o = in.get<std::uint32_t>();
  if (offsets.front() != 0 || offsets.back() != num_edges || !std::is_sorted(offsets.begin(), offsets.end())) {
    throw Error(Errc::MalformedRecord, "inconsistent adjacency offsets");
  }
  g.edges.resize(num_edges);
  for (std::uint32_t node = 0; node < g.num_nodes; ++node) {
    for (std::uint32_t e = offsets[node]; e < offsets[node + 1]; ++e) g.edges[e].src = node;
  }
  for (auto& e : g.edges) {
    e.dst = in.get<std::uint32_t>();
    if (e.dst >= g.num_nodes) throw Error(Errc::MalformedRecord, "edge destination out of range");
  }
  g.edge_attrs.resize(num_edges);
  for (auto& a : g.edge_attrs) {
    a[0] = in.get<float>();
    a[1] = in.get<float>();
  }
  if (in.remaining() >= 2) g.label = in.get<std::uint16_t>();
  return g;
}

}  // namespace evg
