#include "vmtr/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <type_traits>
#include <utility>

namespace vmtr {

namespace {

struct KeyHandler {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  const std::string v = trim(text);
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(key, "cannot parse '" + text + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string v = normalize_key(trim(text));
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError(key, "cannot parse '" + text + "' as a boolean");
}

std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// `accessor` is a generic lambda returning a reference into either a const or mutable config.
template <typename Accessor>
KeyHandler numeric(Accessor accessor) {
  using T = std::remove_reference_t<decltype(accessor(std::declval<RunConfig&>()))>;
  return {[accessor](RunConfig& c, const std::string& key, const std::string& v) {
            accessor(c) = parse_number<T>(key, v);
          },
          [accessor](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>)
              return format_double(accessor(c));
            else
              return std::to_string(accessor(c));
          }};
}

#define VMTR_FIELD(expr) numeric([](auto& c) -> auto& { return expr; })

const std::vector<std::pair<std::string, KeyHandler>>& handlers() {
  static const std::vector<std::pair<std::string, KeyHandler>> table = [] {
    std::vector<std::pair<std::string, KeyHandler>> t{
        {"a1", VMTR_FIELD(c.solver.a1)},
        {"a2", VMTR_FIELD(c.solver.a2)},
        {"gamma1", VMTR_FIELD(c.solver.gamma1)},
        {"gamma2", VMTR_FIELD(c.solver.gamma2)},
        {"gamma3", VMTR_FIELD(c.solver.gamma3)},
        {"theta", VMTR_FIELD(c.solver.theta)},
        {"sigma", VMTR_FIELD(c.solver.sigma)},
        {"levels_k", VMTR_FIELD(c.solver.levels_k)},
        {"iters_nn", VMTR_FIELD(c.solver.iters_nn)},
        {"alpha", VMTR_FIELD(c.solver.alpha)},
        {"dt", VMTR_FIELD(c.solver.dt)},
        {"dt_phi", VMTR_FIELD(c.solver.dt_phi)},
        {"dt_phi_max", VMTR_FIELD(c.solver.dt_phi_max)},
        {"regrid_tol", VMTR_FIELD(c.solver.regrid_tol)},
        {"delta_weight", VMTR_FIELD(c.solver.delta_weight)},
        {"chambolle_step", VMTR_FIELD(c.solver.chambolle_step)},
        {"pd_tau", VMTR_FIELD(c.solver.pd_tau)},
        {"pd_sigma", VMTR_FIELD(c.solver.pd_sigma)},
        {"cg_tol", VMTR_FIELD(c.solver.cg_tol)},
        {"cg_max", VMTR_FIELD(c.solver.cg_max)},
        {"inv_max_iter", VMTR_FIELD(c.solver.inv_max_iter)},
        {"inv_tol_px", VMTR_FIELD(c.solver.inv_tol_px)},
        {"outer_iters", VMTR_FIELD(c.solver.outer_iters)},
        {"canny_low", VMTR_FIELD(c.solver.canny_low)},
        {"canny_high", VMTR_FIELD(c.solver.canny_high)},
        {"floor_c", VMTR_FIELD(c.solver.floor_c)},
        {"blur_sigma", VMTR_FIELD(c.solver.blur_sigma)},
        {"inner_tol", VMTR_FIELD(c.solver.inner_tol)},
        {"stop_tol", VMTR_FIELD(c.solver.stop_tol)},
        {"frames", VMTR_FIELD(c.experiment.frames)},
        {"accel", VMTR_FIELD(c.experiment.acceleration)},
        {"center_fraction", VMTR_FIELD(c.experiment.center_fraction)},
        {"sigma_n", VMTR_FIELD(c.experiment.sigma_n)},
        {"amplitude", VMTR_FIELD(c.experiment.amplitude)},
        {"period", VMTR_FIELD(c.experiment.period)},
        {"hr_size", VMTR_FIELD(c.experiment.hr_size)},
        {"factor", VMTR_FIELD(c.experiment.factor)},
        {"seed", VMTR_FIELD(c.experiment.seed)},
    };
    t.push_back({"h_mode",
                 {[](RunConfig& c, const std::string& key, const std::string& v) {
                    const std::string m = normalize_key(trim(v));
                    if (m == "cg")
                      c.solver.h_mode = HMode::cg;
                    else if (m == "diagonal")
                      c.solver.h_mode = HMode::diagonal;
                    else
                      throw ConfigError(key, "expected cg or diagonal, got '" + v + "'");
                  },
                  [](const RunConfig& c) { return std::string(c.solver.h_mode == HMode::cg ? "cg" : "diagonal"); }}});
    t.push_back({"mode",
                 {[](RunConfig& c, const std::string& key, const std::string& v) {
                    const std::string m = normalize_key(trim(v));
                    if (m == "joint")
                      c.mode = RunMode::joint;
                    else if (m == "sequential")
                      c.mode = RunMode::sequential;
                    else
                      throw ConfigError(key, "expected joint or sequential, got '" + v + "'");
                  },
                  [](const RunConfig& c) {
                    return std::string(c.mode == RunMode::joint ? "joint" : "sequential");
                  }}});
    t.push_back({"dataset", {[](RunConfig& c, const std::string&, const std::string& v) { c.dataset = trim(v); },
                             [](const RunConfig& c) { return c.dataset.string(); }}});
    t.push_back({"out", {[](RunConfig& c, const std::string&, const std::string& v) { c.out = trim(v); },
                         [](const RunConfig& c) { return c.out.string(); }}});
    t.push_back({"export_h",
                 {[](RunConfig& c, const std::string& key, const std::string& v) { c.export_h = parse_bool(key, v); },
                  [](const RunConfig& c) { return std::string(c.export_h ? "true" : "false"); }}});
    t.push_back({"export_stages",
                 {[](RunConfig& c, const std::string& key, const std::string& v) {
                    c.export_stages = parse_bool(key, v);
                  },
                  [](const RunConfig& c) { return std::string(c.export_stages ? "true" : "false"); }}});
    return t;
  }();
  return table;
}

#undef VMTR_FIELD

const KeyHandler& handler(const std::string& key) {
  const auto& t = handlers();
  const auto it = std::find_if(t.begin(), t.end(), [&](const auto& e) { return e.first == key; });
  if (it == t.end()) throw ConfigError(key, "unknown key");
  return it->second;
}

}  // namespace

std::string normalize_key(std::string key) {
  std::transform(key.begin(), key.end(), key.begin(), [](unsigned char ch) {
    return ch == '-' ? '_' : static_cast<char>(std::tolower(ch));
  });
  return key;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, h] : handlers()) k.push_back(name);
    return k;
  }();
  return keys;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const std::string k = normalize_key(trim(key));
  handler(k).set(cfg, k, value);
  if (k == "blur_sigma") cfg.experiment.blur_sigma = cfg.solver.blur_sigma;
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  const std::string k = normalize_key(trim(key));
  return handler(k).get(cfg);
}

void RunConfig::validate() const {
  try {
    solver.validate();
    experiment.validate();
  } catch (const std::invalid_argument& e) {
    const std::string what = e.what();
    const auto colon = what.find(':');
    throw ConfigError(colon == std::string::npos ? "config" : what.substr(0, colon),
                      colon == std::string::npos ? what : trim(what.substr(colon + 1)));
  }
  if (out.empty()) throw ConfigError("out", "must not be empty");
  if (dataset.empty()) throw ConfigError("dataset", "must not be empty");
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(number), "expected key=value, got '" + line + "'");
    set_config_value(cfg, line.substr(0, eq), line.substr(eq + 1));
  }
}

RunConfig parse_config(const std::optional<std::filesystem::path>& file,
                       const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("config", "cannot read " + file->string());
    std::ostringstream text;
    text << in.rdbuf();
    apply_config_text(cfg, text.str());
  }
  for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

std::string dump_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [name, h] : handlers()) out += name + "=" + h.get(cfg) + "\n";
  return out;
}

}  // namespace vmtr
