#include "cloudtomo/config.hpp"

#include "cloudtomo/errors.hpp"
#include "cloudtomo/io.hpp"

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace cloudtomo {

namespace {

using Getter = std::function<std::string(const ExperimentConfig&)>;
using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

struct Field {
  std::string section;
  std::string key;
  Getter get;
  Setter set;
};

double to_double(const std::string& s) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v))
    throw std::invalid_argument("expected a finite number, got '" + s + "'");
  return v;
}

long long to_integer(const std::string& s) {
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE)
    throw std::invalid_argument("expected an integer, got '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw std::invalid_argument("expected true or false, got '" + s + "'");
}

template <typename Access>
Field real(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key),
          [access](const ExperimentConfig& c) { return format_double(access(const_cast<ExperimentConfig&>(c))); },
          [access](ExperimentConfig& c, const std::string& v) { access(c) = to_double(v); }};
}

template <typename Access>
Field integer(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key),
          [access](const ExperimentConfig& c) { return std::to_string(access(const_cast<ExperimentConfig&>(c))); },
          [access](ExperimentConfig& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(access(c))>;
            if constexpr (std::is_unsigned_v<T>) {
              T n{};
              const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
              if (ec == std::errc::result_out_of_range) throw std::invalid_argument("integer out of range: " + v);
              if (v.empty() || ec != std::errc() || end != v.data() + v.size())
                throw std::invalid_argument("expected a nonnegative integer, got '" + v + "'");
              access(c) = n;
            } else {
              const long long n = to_integer(v);
              if (n < static_cast<long long>(std::numeric_limits<T>::min()) ||
                  n > static_cast<long long>(std::numeric_limits<T>::max()))
                throw std::invalid_argument("integer out of range: " + v);
              access(c) = static_cast<T>(n);
            }
          }};
}

template <typename Access>
Field boolean(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key),
          [access](const ExperimentConfig& c) { return std::string(access(const_cast<ExperimentConfig&>(c)) ? "true" : "false"); },
          [access](ExperimentConfig& c, const std::string& v) { access(c) = to_bool(v); }};
}

template <typename Access>
Field text(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key),
          [access](const ExperimentConfig& c) { return access(const_cast<ExperimentConfig&>(c)); },
          [access](ExperimentConfig& c, const std::string& v) { access(c) = v; }};
}

template <typename Access>
Field curve(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key),
          [access](const ExperimentConfig& c) {
            return format_double(access(const_cast<ExperimentConfig&>(c)).value.front());
          },
          [access](ExperimentConfig& c, const std::string& v) { access(c) = SpectralCurve::flat(to_double(v)); }};
}

template <typename Access, typename Parse, typename Print>
Field named(std::string section, std::string key, Access access, Parse parse, Print print) {
  return {std::move(section), std::move(key),
          [access, print](const ExperimentConfig& c) { return print(access(const_cast<ExperimentConfig&>(c))); },
          [access, parse](ExperimentConfig& c, const std::string& v) { access(c) = parse(v); }};
}

#define CT_ACCESS(expr) [](ExperimentConfig & c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      text("scene", "kind", CT_ACCESS(scene.kind)),
      text("scene", "preset", CT_ACCESS(scene.preset)),
      text("scene", "file", CT_ACCESS(scene.file)),
      text("scene", "mask", CT_ACCESS(scene.mask)),
      integer("scene", "nx", CT_ACCESS(scene.nx)),
      integer("scene", "ny", CT_ACCESS(scene.ny)),
      integer("scene", "nz", CT_ACCESS(scene.nz)),
      real("scene", "voxel_size", CT_ACCESS(scene.voxel_size)),
      real("scene", "base_height", CT_ACCESS(scene.base_height)),
      real("scene", "effective_variance", CT_ACCESS(scene.effective_variance)),
      real("scene", "alpha_lwc", CT_ACCESS(scene.alpha_lwc)),
      real("scene", "alpha_re", CT_ACCESS(scene.alpha_re)),
      real("scene", "perturbation", CT_ACCESS(scene.perturbation)),

      integer("constellation", "satellites", CT_ACCESS(constellation.satellites)),
      real("constellation", "altitude_km", CT_ACCESS(constellation.altitude_km)),
      real("constellation", "spacing_km", CT_ACCESS(constellation.spacing_km)),
      integer("constellation", "nadir_index", CT_ACCESS(constellation.nadir_index)),
      integer("constellation", "resolution", CT_ACCESS(constellation.optics.resolution)),
      real("constellation", "focal_length", CT_ACCESS(constellation.optics.focal_length)),
      real("constellation", "aperture", CT_ACCESS(constellation.optics.aperture)),
      real("constellation", "pixel_pitch", CT_ACCESS(constellation.optics.pixel_pitch)),
      real("constellation", "roll_deg", CT_ACCESS(constellation.optics.roll_deg)),

      real("sun", "zenith", CT_ACCESS(sun.zenith_deg)),
      real("sun", "azimuth", CT_ACCESS(sun.azimuth_deg)),
      real("sun", "irradiance", CT_ACCESS(sun.irradiance)),

      real("band", "lambda_min", CT_ACCESS(band.lambda_min)),
      real("band", "lambda_max", CT_ACCESS(band.lambda_max)),
      curve("band", "toa_scale", CT_ACCESS(band.toa_scale)),

      curve("sensor", "qe", CT_ACCESS(sensor.qe)),
      curve("sensor", "optics_efficiency", CT_ACCESS(sensor.optics_efficiency)),
      real("sensor", "full_well", CT_ACCESS(sensor.full_well)),
      real("sensor", "read_noise", CT_ACCESS(sensor.read_noise)),
      real("sensor", "dark_current", CT_ACCESS(sensor.dark_current)),
      integer("sensor", "bits", CT_ACCESS(sensor.bits)),
      boolean("sensor", "noise", CT_ACCESS(noise)),

      real("optics", "wavelength_nm", CT_ACCESS(optics.wavelength_nm)),
      named("optics", "index_real", CT_ACCESS(optics.refractive_index),
            [](const std::string&) -> std::complex<double> { throw std::logic_error("unused"); },
            [](const std::complex<double>& m) { return format_double(m.real()); }),
      named("optics", "index_imag", CT_ACCESS(optics.refractive_index),
            [](const std::string&) -> std::complex<double> { throw std::logic_error("unused"); },
            [](const std::complex<double>& m) { return format_double(m.imag()); }),
      real("optics", "re_min", CT_ACCESS(optics.re_min)),
      real("optics", "re_max", CT_ACCESS(optics.re_max)),
      real("optics", "re_step", CT_ACCESS(optics.re_step)),
      integer("optics", "angle_count", CT_ACCESS(optics.angle_count)),
      integer("optics", "radius_nodes", CT_ACCESS(optics.radius_nodes)),
      text("optics", "cache", CT_ACCESS(optics_cache)),

      integer("render", "supersample", CT_ACCESS(render.supersample)),
      real("render", "max_substep", CT_ACCESS(render.max_substep)),
      boolean("render", "rayleigh", CT_ACCESS(render.rayleigh)),
      real("render", "rayleigh_beta0", CT_ACCESS(render.rayleigh_beta0)),
      real("render", "rayleigh_scale_height", CT_ACCESS(render.rayleigh_scale_height)),
      real("render", "surface_albedo", CT_ACCESS(render.surface_albedo)),

      boolean("cloudbow", "enabled", CT_ACCESS(cloudbow.enabled)),
      real("cloudbow", "angle_min", CT_ACCESS(cloudbow.angle_min)),
      real("cloudbow", "angle_max", CT_ACCESS(cloudbow.angle_max)),
      real("cloudbow", "resolution", CT_ACCESS(cloudbow.resolution)),

      named("init", "method", CT_ACCESS(init.method), parse_init_method,
            [](InitMethod m) { return to_string(m); }),
      real("init", "alpha_lwc_min", CT_ACCESS(init.alpha_lwc.min)),
      real("init", "alpha_lwc_max", CT_ACCESS(init.alpha_lwc.max)),
      integer("init", "alpha_lwc_count", CT_ACCESS(init.alpha_lwc.count)),
      real("init", "alpha_re_min", CT_ACCESS(init.alpha_re.min)),
      real("init", "alpha_re_max", CT_ACCESS(init.alpha_re.max)),
      integer("init", "alpha_re_count", CT_ACCESS(init.alpha_re.count)),
      real("init", "lwc_min", CT_ACCESS(init.lwc.min)),
      real("init", "lwc_max", CT_ACCESS(init.lwc.max)),
      integer("init", "lwc_count", CT_ACCESS(init.lwc.count)),
      real("init", "re_min", CT_ACCESS(init.re.min)),
      real("init", "re_max", CT_ACCESS(init.re.max)),
      integer("init", "re_count", CT_ACCESS(init.re.count)),
      real("init", "typical_lwc", CT_ACCESS(init.typical_lwc)),
      real("init", "typical_re", CT_ACCESS(init.typical_re)),
      real("init", "floor_lwc", CT_ACCESS(init.lwc_min)),
      real("init", "floor_re", CT_ACCESS(init.re_min)),

      named("retrieval", "mode", CT_ACCESS(retrieval.mode), parse_retrieval_mode,
            [](RetrievalMode m) { return to_string(m); }),
      named("retrieval", "cost", CT_ACCESS(retrieval.cost), parse_retrieval_cost,
            [](RetrievalCost m) { return to_string(m); }),
      real("retrieval", "precondition_lwc", CT_ACCESS(retrieval.preconditioner.lwc)),
      real("retrieval", "precondition_re", CT_ACCESS(retrieval.preconditioner.re)),
      boolean("retrieval", "freeze_re", CT_ACCESS(retrieval.freeze_re)),
      integer("retrieval", "max_iterations", CT_ACCESS(retrieval.max_iterations)),
      integer("retrieval", "window", CT_ACCESS(retrieval.window)),
      real("retrieval", "phase_tolerance", CT_ACCESS(retrieval.phase_tolerance)),
      real("retrieval", "cycle_tolerance", CT_ACCESS(retrieval.cycle_tolerance)),
      integer("retrieval", "max_cycles", CT_ACCESS(retrieval.max_cycles)),

      integer("run", "seed", CT_ACCESS(seed)),
      text("run", "output", CT_ACCESS(output)),
  };
  return table;
}

#undef CT_ACCESS

// The refractive index is one complex value split over two keys.
void set_index(ExperimentConfig& c, const std::string& key, const std::string& value) {
  const double v = to_double(value);
  if (key == "index_real") c.optics.refractive_index.real(v);
  else c.optics.refractive_index.imag(v);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

void ExperimentConfig::validate() const {
  const SceneConfig& s = scene;
  require(s.kind == "monotonic" || s.kind == "blob" || s.kind == "file", "scene.kind must be monotonic, blob or file");
  require(s.preset == "reference" || s.preset == "custom", "scene.preset must be reference or custom");
  require(s.mask == "truth" || s.mask == "box", "scene.mask must be truth or box");
  require(s.kind != "file" || !s.file.empty(), "scene.file is required when scene.kind = file");
  require(s.nx > 0 && s.ny > 0 && s.nz > 0, "scene.nx, scene.ny and scene.nz must be positive");
  require(s.voxel_size > 0.0, "scene.voxel_size must be positive");
  require(s.base_height >= 0.0, "scene.base_height must be nonnegative");
  require(s.effective_variance > 0.0 && s.effective_variance < 0.5, "scene.effective_variance must lie in (0, 0.5)");
  require(s.alpha_lwc >= 0.0 && s.alpha_re >= 0.0, "scene.alpha_lwc and scene.alpha_re must be nonnegative");
  require(s.perturbation >= 0.0 && s.perturbation < 1.0, "scene.perturbation must lie in [0, 1)");
  if (s.preset == "reference" && s.kind != "file") {
    require(s.base_height >= 550.0, "scene.preset = reference needs scene.base_height >= 550");
    require(s.base_height + s.nz * s.voxel_size <= 1710.0, "scene.preset = reference needs the cloud top <= 1710 m");
    require(s.effective_variance == 0.1, "scene.preset = reference fixes scene.effective_variance = 0.1");
  }
  const auto& c = constellation;
  require(c.satellites >= 1, "constellation.satellites must be at least 1");
  require(c.altitude_km > 0.0, "constellation.altitude_km must be positive");
  require(c.spacing_km > 0.0, "constellation.spacing_km must be positive");
  require(c.nadir_index >= 1 && c.nadir_index <= c.satellites, "constellation.nadir_index must lie in [1, satellites]");
  require(c.optics.resolution >= 1, "constellation.resolution must be positive");
  require(c.optics.focal_length > 0.0 && c.optics.aperture > 0.0 && c.optics.pixel_pitch > 0.0,
          "constellation focal_length, aperture and pixel_pitch must be positive");

  require(sun.zenith_deg >= 0.0 && sun.zenith_deg < 90.0, "sun.zenith must lie in [0, 90)");
  require(sun.irradiance > 0.0, "sun.irradiance must be positive");

  auto wrap = [](const char* what, auto&& fn) {
    try {
      fn();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string(what) + ": " + e.what());
    }
  };
  wrap("band", [&] { band.validate(); });
  wrap("sensor", [&] { sensor.validate(); });
  require(optics.wavelength_nm >= band.lambda_min && optics.wavelength_nm <= band.lambda_max,
          "optics.wavelength_nm must lie inside the band");
  require(optics.re_min > 0.0 && optics.re_max > optics.re_min && optics.re_step > 0.0,
          "optics r_e axis needs 0 < re_min < re_max and re_step > 0");
  require(optics.angle_count >= 181 && optics.radius_nodes >= 16,
          "optics.angle_count must be >= 181 and optics.radius_nodes >= 16");
  require(optics.refractive_index.real() > 1.0 && optics.refractive_index.imag() >= 0.0,
          "optics refractive index needs index_real > 1 and index_imag >= 0");
  wrap("render", [&] {
    if (render.supersample < 1) throw std::invalid_argument("supersample must be at least 1");
    if (!(render.max_substep > 0.0)) throw std::invalid_argument("max_substep must be positive");
    if (render.surface_albedo < 0.0 || render.surface_albedo > 1.0)
      throw std::invalid_argument("surface_albedo must lie in [0, 1]");
    if (render.rayleigh_beta0 < 0.0 || !(render.rayleigh_scale_height > 0.0))
      throw std::invalid_argument("rayleigh parameters must be positive");
  });
  require(cloudbow.angle_min >= 120.0 && cloudbow.angle_max <= 180.0 && cloudbow.angle_min <= cloudbow.angle_max,
          "cloudbow range must lie within [120, 180]");
  require(cloudbow.resolution > 0.0, "cloudbow.resolution must be positive");
  wrap("init", [&] { init.validate(); });
  wrap("retrieval", [&] { retrieval.validate(); });
  require(init.re_min >= optics.re_min, "init.floor_re must not be below optics.re_min");
  require(!output.empty(), "run.output must not be empty");
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::map<std::string, const Field*> index;
  for (const Field& f : fields()) index[f.section + "." + f.key] = &f;
  std::set<std::string> sections;
  for (const Field& f : fields()) sections.insert(f.section);

  std::set<std::string> seen;
  std::string section;
  int line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("malformed section header '" + line + "'", line_no);
      section = trim(line.substr(1, line.size() - 2));
      if (!sections.count(section)) throw ConfigError("unknown section '" + section + "'", line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value', got '" + line + "'", line_no);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError("key '" + key + "' appears before any [section]", line_no);
    const std::string full = section + "." + key;
    const auto it = index.find(full);
    if (it == index.end()) throw ConfigError("unknown key '" + full + "'", line_no);
    if (!seen.insert(full).second) throw ConfigError("duplicate key '" + full + "'", line_no);
    try {
      if (full == "optics.index_real" || full == "optics.index_imag") set_index(cfg, key, value);
      else it->second->set(cfg, value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(full + ": " + e.what(), line_no);
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = load_text(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text);
}

std::vector<std::array<std::string, 3>> config_entries(const ExperimentConfig& config) {
  std::vector<std::array<std::string, 3>> out;
  for (const Field& f : fields()) out.push_back({f.section, f.key, f.get(config)});
  return out;
}

std::string serialize_config(const ExperimentConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const auto& [sec, key, value] : config_entries(config)) {
    if (sec != section) {
      out << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
      section = sec;
    }
    out << key << " = " << value << '\n';
  }
  return out.str();
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return serialize_config(a) == serialize_config(b);
}

}  // namespace cloudtomo
