#pragma once

// Network description: buses, lines, and the JSON document that carries them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace cctscreen {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The network document is malformed or violates a model invariant.
class ModelError : public Error {
 public:
  using Error::Error;
};

enum class BusKind { kGenerator, kLoad, kInfinite };

inline std::string_view to_string(BusKind kind) {
  switch (kind) {
    case BusKind::kGenerator: return "generator";
    case BusKind::kLoad: return "load";
    case BusKind::kInfinite: return "infinite";
  }
  return "?";
}

struct Bus {
  int id = 0;
  BusKind kind = BusKind::kGenerator;
  double voltage = 1.0;
  double inertia = 0.0;  // generators only
  double damping = 0.0;  // generators and loads
  /// Net injection after the disturbance: P_m for generators, -P_d for loads.
  double power = 0.0;
  /// Injection before the disturbance; defaults to `power`.
  std::optional<double> pre_fault_power;

  bool has_state() const { return kind != BusKind::kInfinite; }
  double injection(bool pre_fault) const {
    return pre_fault && pre_fault_power ? *pre_fault_power : power;
  }
};

/// A transmission line. Endpoints are stored with from < to.
struct Line {
  int from = 0;
  int to = 0;
  double susceptance = 0.0;
  double conductance = 0.0;

  bool lossy() const { return conductance > 0.0; }
  double admittance() const { return std::hypot(conductance, susceptance); }
  /// Phase shift arctan(G/B) of a lossy line.
  double loss_angle() const { return std::atan2(conductance, susceptance); }
};

/// Order-insensitive bus pair naming a line, e.g. parsed from "6-4".
struct LinePair {
  int a = 0;
  int b = 0;

  LinePair() = default;
  LinePair(int u, int v) : a(std::min(u, v)), b(std::max(u, v)) {}

  friend bool operator==(const LinePair&, const LinePair&) = default;
  friend auto operator<=>(const LinePair&, const LinePair&) = default;

  std::string str() const { return std::to_string(a) + "-" + std::to_string(b); }

  static LinePair parse(std::string_view text) {
    const auto dash = text.find('-', 1);
    if (dash == std::string_view::npos) {
      throw ModelError("line designation must look like 'u-v': " + std::string(text));
    }
    try {
      std::size_t used = 0;
      const std::string left(text.substr(0, dash));
      const std::string right(text.substr(dash + 1));
      const int u = std::stoi(left, &used);
      if (used != left.size()) throw std::invalid_argument(left);
      const int v = std::stoi(right, &used);
      if (used != right.size()) throw std::invalid_argument(right);
      if (u == v) throw std::invalid_argument("identical endpoints");
      return LinePair(u, v);
    } catch (const std::logic_error&) {
      throw ModelError("line designation must look like 'u-v': " + std::string(text));
    }
  }
};

/// Voltage-setpoint fluctuation mode: every |V_k| may drift within
/// [(1-ratio) V0, (1+ratio) V0] during the transient.
struct VoltageFluctuation {
  double ratio = 0.1;
  double nominal_voltage = 1.0;
};

struct ParseOptions {
  /// |sum P_k| allowed for lossless networks without an infinite bus.
  double balance_tolerance = 1e-9;
  std::optional<VoltageFluctuation> fluctuation;
};

/// Immutable network instance. Buses are ordered generators, loads, infinite
/// buses, each group by ascending id; lines keep document order.
class NetworkModel {
 public:
  NetworkModel(std::vector<Bus> buses, std::vector<Line> lines,
               ParseOptions options = {})
      : buses_(std::move(buses)), lines_(std::move(lines)),
        fluctuation_(options.fluctuation) {
    std::stable_sort(buses_.begin(), buses_.end(), [](const Bus& x, const Bus& y) {
      if (x.kind != y.kind) return static_cast<int>(x.kind) < static_cast<int>(y.kind);
      return x.id < y.id;
    });
    for (auto& line : lines_) {
      if (line.from > line.to) std::swap(line.from, line.to);
    }
    validate(options);
  }

  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Line>& lines() const { return lines_; }

  /// Number of generators (m).
  int num_generators() const { return num_generators_; }
  /// Number of buses carrying state: generators plus loads (n).
  int num_dynamic() const { return num_dynamic_; }
  int num_lines() const { return static_cast<int>(lines_.size()); }
  /// Dimension of the state x = [generator angles, generator speeds, load angles].
  int state_dim() const { return num_dynamic_ + num_generators_; }
  bool has_infinite_bus() const {
    return static_cast<int>(buses_.size()) > num_dynamic_;
  }
  bool lossy() const {
    return std::any_of(lines_.begin(), lines_.end(), [](const Line& l) { return l.lossy(); });
  }
  const std::optional<VoltageFluctuation>& fluctuation() const { return fluctuation_; }

  /// Position of a bus in the ordering above.
  int bus_index(int id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) throw ModelError("unknown bus " + std::to_string(id));
    return it->second;
  }
  const Bus& bus(int id) const { return buses_[bus_index(id)]; }

  /// Index of a line in the fixed edge ordering, or nullopt.
  std::optional<int> find_line(LinePair pair) const {
    for (int e = 0; e < num_lines(); ++e) {
      if (lines_[e].from == pair.a && lines_[e].to == pair.b) return e;
    }
    return std::nullopt;
  }
  int line_index(LinePair pair) const {
    if (auto e = find_line(pair)) return *e;
    throw ModelError("unknown line " + pair.str());
  }
  LinePair line_pair(int e) const { return {lines_[e].from, lines_[e].to}; }

  /// Total injection over state-carrying buses.
  double power_sum(bool pre_fault = false) const {
    double total = 0.0;
    for (int k = 0; k < num_dynamic_; ++k) total += buses_[k].injection(pre_fault);
    return total;
  }

 private:
  void validate(const ParseOptions& options) {
    std::set<int> ids;
    num_generators_ = 0;
    num_dynamic_ = 0;
    for (int k = 0; k < static_cast<int>(buses_.size()); ++k) {
      const Bus& b = buses_[k];
      if (!ids.insert(b.id).second) throw ModelError("duplicate bus id " + std::to_string(b.id));
      index_[b.id] = k;
      const std::string where = "bus " + std::to_string(b.id);
      if (!(b.voltage > 0.0) || !std::isfinite(b.voltage)) throw ModelError(where + ": voltage must be positive");
      if (b.kind == BusKind::kGenerator) {
        if (!(b.inertia > 0.0) || !std::isfinite(b.inertia)) throw ModelError(where + ": inertia must be positive");
        ++num_generators_;
      }
      if (b.kind != BusKind::kInfinite) {
        if (!(b.damping > 0.0) || !std::isfinite(b.damping)) throw ModelError(where + ": damping must be positive");
        if (!std::isfinite(b.power)) throw ModelError(where + ": power must be finite");
        ++num_dynamic_;
      }
    }
    if (num_dynamic_ == 0) throw ModelError("network has no generator or load bus");

    std::set<LinePair> seen;
    for (const Line& l : lines_) {
      const std::string where = "line " + LinePair(l.from, l.to).str();
      if (l.from == l.to) throw ModelError(where + ": endpoints must differ");
      if (!ids.count(l.from) || !ids.count(l.to)) throw ModelError(where + ": unknown endpoint");
      if (!seen.insert(LinePair(l.from, l.to)).second) throw ModelError("duplicate " + where);
      if (!(l.susceptance > 0.0) || !std::isfinite(l.susceptance)) throw ModelError(where + ": susceptance must be positive");
      if (!(l.conductance >= 0.0) || !std::isfinite(l.conductance)) throw ModelError(where + ": conductance must be non-negative");
      const bool from_dyn = bus(l.from).has_state();
      const bool to_dyn = bus(l.to).has_state();
      if (!from_dyn && !to_dyn) throw ModelError(where + ": joins two infinite buses");
      // A lossy line's flow is not antisymmetric, so the per-edge compact
      // form is exact only when the far end is an infinite bus.
      if (l.lossy() && from_dyn && to_dyn) {
        throw ModelError(where + ": lossy lines must end at an infinite bus");
      }
    }

    check_connected();

    if (!lossy() && !has_infinite_bus()) {
      for (bool pre : {false, true}) {
        const double total = power_sum(pre);
        if (std::abs(total) > options.balance_tolerance) {
          throw ModelError("power imbalance " + std::to_string(total) +
                           " p.u. in a lossless network without an infinite bus");
        }
      }
    }
    if (lossy() && !has_infinite_bus()) {
      throw ModelError("a lossy network needs an infinite bus to absorb the losses");
    }

    if (fluctuation_) {
      if (lossy()) throw ModelError("voltage-fluctuation mode supports lossless networks only");
      const auto& f = *fluctuation_;
      if (!(f.ratio > 0.0 && f.ratio < 1.0)) throw ModelError("fluctuation ratio must lie in (0, 1)");
      if (!(f.nominal_voltage > 0.0)) throw ModelError("nominal voltage must be positive");
      for (const Bus& b : buses_) {
        if (std::abs(b.voltage - f.nominal_voltage) > f.ratio * f.nominal_voltage + 1e-12) {
          throw ModelError("bus " + std::to_string(b.id) + ": voltage outside the fluctuation band");
        }
      }
    }
  }

  void check_connected() const {
    const int nb = static_cast<int>(buses_.size());
    std::vector<int> parent(nb);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    // All infinite buses share the fixed reference, so they count as one node.
    int first_infinite = -1;
    for (int k = num_dynamic_; k < nb; ++k) {
      if (first_infinite < 0) first_infinite = k;
      else parent[find(k)] = find(first_infinite);
    }
    for (const Line& l : lines_) parent[find(bus_index(l.from))] = find(bus_index(l.to));
    for (int k = 1; k < nb; ++k) {
      if (find(k) != find(0)) throw ModelError("network graph is disconnected");
    }
  }

  std::vector<Bus> buses_;
  std::vector<Line> lines_;
  std::optional<VoltageFluctuation> fluctuation_;
  std::map<int, int> index_;
  int num_generators_ = 0;
  int num_dynamic_ = 0;
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, std::initializer_list<std::string_view> allowed,
                                const std::string& where) {
  for (const auto& item : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw ModelError(where + ": unknown key '" + item.key() + "'");
    }
  }
}

inline double number_field(const nlohmann::json& obj, const char* key, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw ModelError(where + ": missing '" + key + "'");
  if (!it->is_number()) throw ModelError(where + ": '" + key + "' must be a number");
  return it->get<double>();
}

}  // namespace detail

/// Parses a network document:
///
///   {"buses": [{"id": 1, "kind": "generator", "voltage": 1.0, "inertia": 0.1,
///               "damping": 0.15, "power": 0.06, "pre_fault_power": 0.05}, ...],
///    "lines": [{"from": 1, "to": 2, "susceptance": 0.2, "conductance": 0.01}]}
///
/// "pre_fault_power" is optional and sets the injection the system sits at
/// before the disturbance. Unknown keys are rejected.
inline NetworkModel parse_network(std::string_view text, ParseOptions options = {}) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ModelError(std::string("malformed network document: ") + e.what());
  }
  if (!doc.is_object()) throw ModelError("network document must be an object");
  detail::reject_unknown_keys(doc, {"buses", "lines"}, "document");
  if (!doc.contains("buses") || !doc["buses"].is_array()) throw ModelError("document: 'buses' must be an array");
  if (!doc.contains("lines") || !doc["lines"].is_array()) throw ModelError("document: 'lines' must be an array");

  std::vector<Bus> buses;
  for (const auto& item : doc["buses"]) {
    if (!item.is_object()) throw ModelError("bus entries must be objects");
    if (!item.contains("id") || !item["id"].is_number_integer()) throw ModelError("bus: 'id' must be an integer");
    Bus b;
    b.id = item["id"].get<int>();
    const std::string where = "bus " + std::to_string(b.id);
    if (!item.contains("kind") || !item["kind"].is_string()) throw ModelError(where + ": missing 'kind'");
    const auto kind = item["kind"].get<std::string>();
    if (kind == "generator") {
      b.kind = BusKind::kGenerator;
      detail::reject_unknown_keys(item, {"id", "kind", "voltage", "inertia", "damping", "power", "pre_fault_power"}, where);
      b.inertia = detail::number_field(item, "inertia", where);
      b.damping = detail::number_field(item, "damping", where);
      b.power = detail::number_field(item, "power", where);
    } else if (kind == "load") {
      b.kind = BusKind::kLoad;
      detail::reject_unknown_keys(item, {"id", "kind", "voltage", "damping", "power", "pre_fault_power"}, where);
      b.damping = detail::number_field(item, "damping", where);
      b.power = detail::number_field(item, "power", where);
    } else if (kind == "infinite") {
      b.kind = BusKind::kInfinite;
      detail::reject_unknown_keys(item, {"id", "kind", "voltage", "power"}, where);
    } else {
      throw ModelError(where + ": unknown kind '" + kind + "'");
    }
    b.voltage = detail::number_field(item, "voltage", where);
    if (item.contains("pre_fault_power")) b.pre_fault_power = detail::number_field(item, "pre_fault_power", where);
    buses.push_back(b);
  }

  std::vector<Line> lines;
  for (const auto& item : doc["lines"]) {
    if (!item.is_object()) throw ModelError("line entries must be objects");
    detail::reject_unknown_keys(item, {"from", "to", "susceptance", "conductance"}, "line");
    if (!item.contains("from") || !item["from"].is_number_integer() || !item.contains("to") ||
        !item["to"].is_number_integer()) {
      throw ModelError("line: 'from' and 'to' must be integers");
    }
    Line l;
    l.from = item["from"].get<int>();
    l.to = item["to"].get<int>();
    const std::string where = "line " + std::to_string(l.from) + "-" + std::to_string(l.to);
    l.susceptance = detail::number_field(item, "susceptance", where);
    if (item.contains("conductance")) l.conductance = detail::number_field(item, "conductance", where);
    lines.push_back(l);
  }
  return NetworkModel(std::move(buses), std::move(lines), options);
}

/// FNV-1a digest of a document, used to tag reports.
inline std::uint64_t document_hash(std::string_view text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace cctscreen
