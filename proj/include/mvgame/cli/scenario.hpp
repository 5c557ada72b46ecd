#pragma once

// Scenario files: flat `key = value` pairs grouped under [model], [sim],
// [output], plus optional [reference] (published figures to compare against)
// and [solution] (a candidate Riccati solution for the residual command).
// Values are numbers, booleans, quoted strings or bracketed number arrays;
// `#` starts a comment.

#include "mvgame/errors.hpp"
#include "mvgame/hamiltonian.hpp"
#include "mvgame/riccati.hpp"
#include "mvgame/simulate.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace mvgame::cli {

struct ConfigValue {
  std::variant<double, bool, std::string, std::vector<double>> data;
  int line = 0;
  std::string raw;
};

using ConfigSection = std::map<std::string, ConfigValue>;
using ConfigTable = std::map<std::string, ConfigSection>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_number(const std::string& s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

inline std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

inline ConfigValue parse_value(const std::string& raw, int line) {
  const std::string v = trim(raw);
  if (v.empty()) throw ConfigError("missing value", line);
  if (v == "true" || v == "false") return {v == "true", line, v};
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') throw ConfigError("unterminated string", line);
    return {v.substr(1, v.size() - 2), line, v};
  }
  if (v.front() == '[') {
    if (v.back() != ']') throw ConfigError("unterminated array", line);
    std::vector<double> out;
    const std::string body = trim(v.substr(1, v.size() - 2));
    if (!body.empty()) {
      std::stringstream ss(body);
      std::string item;
      while (std::getline(ss, item, ',')) {
        const auto num = parse_number(item);
        if (!num) throw ConfigError("array entry '" + trim(item) + "' is not a number", line);
        out.push_back(*num);
      }
    }
    return {out, line, v};
  }
  if (const auto num = parse_number(v)) return {*num, line, v};
  throw ConfigError("cannot parse value '" + v + "'", line);
}

}  // namespace detail

inline ConfigTable parse_config(std::istream& in) {
  ConfigTable table;
  std::string current;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string text = detail::trim(detail::strip_comment(raw));
    if (text.empty()) continue;
    if (text.front() == '[') {
      if (text.back() != ']') throw ConfigError("malformed section header", line);
      current = detail::trim(text.substr(1, text.size() - 2));
      if (current.empty()) throw ConfigError("empty section name", line);
      if (table.count(current)) throw ConfigError("duplicate section [" + current + "]", line);
      table[current];
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line);
    if (current.empty()) throw ConfigError("key outside of a section", line);
    const std::string key = detail::trim(text.substr(0, eq));
    if (key.empty()) throw ConfigError("empty key", line);
    auto& section = table[current];
    if (section.count(key)) throw ConfigError("duplicate key '" + key + "'", line);
    section[key] = detail::parse_value(text.substr(eq + 1), line);
  }
  return table;
}

inline ConfigTable parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  return parse_config(in);
}

/// Typed, checked access to one section.
class SectionReader {
 public:
  SectionReader(const ConfigTable& table, std::string name) : name_(std::move(name)) {
    const auto it = table.find(name_);
    if (it != table.end()) section_ = &it->second;
  }

  bool present() const { return section_ != nullptr; }
  bool has(const std::string& key) const { return section_ && section_->count(key); }

  double number(const std::string& key) const { return get<double>(key, "a number"); }
  double number(const std::string& key, double fallback) const { return has(key) ? number(key) : fallback; }

  bool boolean(const std::string& key, bool fallback) const { return has(key) ? get<bool>(key, "true/false") : fallback; }

  std::string string(const std::string& key) const { return get<std::string>(key, "a quoted string"); }
  std::string string(const std::string& key, const std::string& fallback) const {
    return has(key) ? string(key) : fallback;
  }

  std::vector<double> array(const std::string& key, std::size_t size) const {
    const auto v = get<std::vector<double>>(key, "a number array");
    if (v.size() != size)
      throw ConfigError("[" + name_ + "] " + key + " needs " + std::to_string(size) + " entries", line(key));
    return v;
  }

  Vec2 vec2(const std::string& key) const {
    const auto v = array(key, 2);
    return {v[0], v[1]};
  }

  /// Symmetric matrix written as [11, 22, 12].
  SymMat2 sym(const std::string& key) const {
    const auto v = array(key, 3);
    return {v[0], v[1], v[2]};
  }

  /// Parsed from the literal text so 64-bit seeds survive exactly.
  std::uint64_t unsigned_int(const std::string& key) const {
    number(key);
    const std::string& raw = section_->at(key).raw;
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
    if (ec != std::errc() || ptr != raw.data() + raw.size())
      throw ConfigError("[" + name_ + "] " + key + " must be a non-negative integer", line(key));
    return v;
  }

  int line(const std::string& key) const { return has(key) ? section_->at(key).line : 0; }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError("[" + name_ + "] " + key + ": " + what, line(key));
  }

  /// Rejects keys outside `allowed`.
  void only(const std::set<std::string>& allowed) const {
    if (!section_) return;
    for (const auto& [key, value] : *section_) {
      if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in [" + name_ + "]", value.line);
    }
  }

 private:
  template <class T>
  const T& get(const std::string& key, const char* kind) const {
    if (!has(key)) throw ConfigError("missing key '" + key + "' in [" + name_ + "]");
    const ConfigValue& v = section_->at(key);
    if (const auto* p = std::get_if<T>(&v.data)) return *p;
    throw ConfigError("[" + name_ + "] " + key + " must be " + kind, v.line);
  }

  std::string name_;
  const ConfigSection* section_ = nullptr;
};

enum class SolverKind { Closed, Newton, Diagonal };
enum class InitKind { Invariant, Standard, Dirac };
enum class OutputFormat { Json, Csv };

struct SimSettings {
  SimConfig base;
  std::size_t replicates = 1;
  InitKind init = InitKind::Invariant;
  Vec2 init_point = Vec2(1.0, 1.0);
  double value_horizon = 50.0;
  std::size_t value_particles = 8192;
  std::size_t value_replicates = 8;
};

/// Published figures to compare the computed record against.
struct Reference {
  std::optional<double> lambda_min, rg_norm, eps_star, margin, c1, c2;
};

struct Scenario {
  std::string name;
  CostParams params;
  SolverKind solver = SolverKind::Newton;
  BranchSpec branch;
  SimSettings sim;
  OutputFormat format = OutputFormat::Json;
  std::string output_path;
  std::optional<Reference> reference;
  std::optional<RiccatiSolution> solution;
};

inline const char* to_string(SolverKind s) {
  switch (s) {
    case SolverKind::Closed: return "closed";
    case SolverKind::Newton: return "newton";
    case SolverKind::Diagonal: return "diagonal";
  }
  return "?";
}

inline const char* to_string(InitKind k) {
  switch (k) {
    case InitKind::Invariant: return "invariant";
    case InitKind::Standard: return "standard";
    case InitKind::Dirac: return "dirac";
  }
  return "?";
}

/// Reads a [solution] section: Q1, Q2, R1, R2 as [11, 22, 12], q1, q2 as [1, 2],
/// optional c1, c2 (otherwise derived from Q and q).
inline std::optional<RiccatiSolution> read_solution(const ConfigTable& table, double r1, double r2) {
  const SectionReader sol(table, "solution");
  if (!sol.present()) return std::nullopt;
  sol.only({"Q1", "Q2", "R1", "R2", "q1", "q2", "c1", "c2", "branch"});
  RiccatiSolution s;
  s.Q1 = sol.sym("Q1");
  s.Q2 = sol.sym("Q2");
  s.R1 = sol.has("R1") ? sol.sym("R1") : SymMat2::zero();
  s.R2 = sol.has("R2") ? sol.sym("R2") : SymMat2::zero();
  s.q1 = sol.has("q1") ? sol.vec2("q1") : Vec2::Zero();
  s.q2 = sol.has("q2") ? sol.vec2("q2") : Vec2::Zero();
  const auto c = ergodic_constants(s, r1, r2);
  s.c1 = sol.number("c1", c[0]);
  s.c2 = sol.number("c2", c[1]);
  if (sol.has("branch")) {
    const auto b = BranchSpec::parse(sol.string("branch"));
    if (!b) sol.fail("branch", "expected one of ++, +-, -+, --");
    s.branch = *b;
  }
  return s;
}

inline Scenario load_scenario(const ConfigTable& table) {
  Scenario sc;
  const SectionReader model(table, "model");
  if (!model.present()) throw ConfigError("missing [model] section");
  for (const auto& [name, section] : table) {
    static const std::set<std::string> known{"model", "sim", "output", "reference", "solution"};
    if (!known.count(name)) throw ConfigError("unknown section [" + name + "]");
  }

  sc.name = model.string("name", "scenario");
  const std::string type = model.string("type");
  const double r1 = model.number("r1");
  const double r2 = model.number("r2");
  if (!(r1 > 0.0)) model.fail("r1", "must be positive");
  if (!(r2 > 0.0)) model.fail("r2", "must be positive");

  if (type == "ex1") {
    model.only({"name", "type", "r1", "r2", "gamma", "branch", "solver"});
    const double gamma = model.number("gamma", 0.0);
    if (!(gamma >= 0.0 && gamma <= 1.0)) model.fail("gamma", "must lie in [0, 1]");
    sc.params = CostParams::ex1(r1, r2, gamma);
    sc.solver = SolverKind::Closed;
    if (model.has("solver") && model.string("solver") != "closed") model.fail("solver", "ex1 only supports 'closed'");
  } else if (type == "ex2") {
    model.only({"name", "type", "r1", "r2", "eta1", "eta2", "branch", "solver"});
    sc.params = CostParams::ex2(r1, r2, model.vec2("eta1"), model.vec2("eta2"));
    const std::string solver = model.string("solver", "newton");
    if (solver == "newton") {
      sc.solver = SolverKind::Newton;
    } else if (solver == "diagonal") {
      sc.solver = SolverKind::Diagonal;
      const Vec2 e1 = sc.params.eta1;
      const Vec2 e2 = sc.params.eta2;
      if (e1(1) != 0.0 || e2(0) != 0.0 || e1(0) == 0.0 || e2(1) == 0.0)
        model.fail("solver", "'diagonal' needs eta1 = [h11, 0] and eta2 = [0, h22] with nonzero h11, h22");
    } else {
      model.fail("solver", "expected 'newton' or 'diagonal'");
    }
  } else {
    model.fail("type", "expected \"ex1\" or \"ex2\"");
  }
  if (model.has("branch")) {
    const auto b = BranchSpec::parse(model.string("branch"));
    if (!b) model.fail("branch", "expected one of ++, +-, -+, --");
    sc.branch = *b;
  }

  const SectionReader sim(table, "sim");
  sim.only({"n_particles", "dt", "t_final", "burn_in", "seed", "replicates", "init", "init_point", "threads",
            "value_horizon", "value_particles", "value_replicates"});
  SimSettings& s = sc.sim;
  if (sim.has("n_particles")) s.base.n_particles = sim.unsigned_int("n_particles");
  s.base.dt = sim.number("dt", s.base.dt);
  s.base.t_final = sim.number("t_final", s.base.t_final);
  s.base.burn_in = sim.number("burn_in", s.base.burn_in);
  if (sim.has("seed")) s.base.seed = sim.unsigned_int("seed");
  if (sim.has("threads")) s.base.threads = static_cast<unsigned>(sim.unsigned_int("threads"));
  if (sim.has("replicates")) s.replicates = sim.unsigned_int("replicates");
  if (s.replicates < 1) sim.fail("replicates", "must be at least 1");
  s.value_horizon = sim.number("value_horizon", s.value_horizon);
  if (!(s.value_horizon > 0.0)) sim.fail("value_horizon", "must be positive");
  if (sim.has("value_particles")) s.value_particles = sim.unsigned_int("value_particles");
  if (s.value_particles < 2) sim.fail("value_particles", "must be at least 2");
  if (sim.has("value_replicates")) s.value_replicates = sim.unsigned_int("value_replicates");
  if (s.value_replicates < 2) sim.fail("value_replicates", "must be at least 2");
  const std::string init = sim.string("init", "invariant");
  if (init == "invariant") {
    s.init = InitKind::Invariant;
  } else if (init == "standard") {
    s.init = InitKind::Standard;
  } else if (init == "dirac") {
    s.init = InitKind::Dirac;
  } else {
    sim.fail("init", "expected \"invariant\", \"standard\" or \"dirac\"");
  }
  if (sim.has("init_point")) s.init_point = sim.vec2("init_point");
  try {
    s.base.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[sim] ") + e.what());
  }

  const SectionReader out(table, "output");
  out.only({"format", "path"});
  const std::string fmt = out.string("format", "json");
  if (fmt == "json") {
    sc.format = OutputFormat::Json;
  } else if (fmt == "csv") {
    sc.format = OutputFormat::Csv;
  } else {
    out.fail("format", "expected \"json\" or \"csv\"");
  }
  sc.output_path = out.string("path", "");

  const SectionReader ref(table, "reference");
  if (ref.present()) {
    ref.only({"lambda_min", "rg_norm", "eps_star", "margin", "c1", "c2"});
    Reference r;
    auto opt = [&](const char* key) -> std::optional<double> {
      return ref.has(key) ? std::optional<double>(ref.number(key)) : std::nullopt;
    };
    r.lambda_min = opt("lambda_min");
    r.rg_norm = opt("rg_norm");
    r.eps_star = opt("eps_star");
    r.margin = opt("margin");
    r.c1 = opt("c1");
    r.c2 = opt("c2");
    sc.reference = r;
  }

  sc.solution = read_solution(table, r1, r2);
  return sc;
}

inline Scenario load_scenario_file(const std::string& path) { return load_scenario(parse_config_file(path)); }

}  // namespace mvgame::cli
