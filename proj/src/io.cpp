#include "cloudtomo/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace cloudtomo {

std::string sha256_hex(std::string_view data) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
    throw std::runtime_error("SHA-256 computation failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string load_text(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void save_text(const std::filesystem::path& file, std::string_view text) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("cannot write " + file.string());
}

std::string sha256_file(const std::filesystem::path& file) { return sha256_hex(load_text(file)); }

std::string format_double(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

namespace {

// Line-oriented reader that reports the failing line number.
class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  std::istringstream next(std::string_view expected_key) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream fields(line);
      if (!expected_key.empty()) {
        std::string key;
        fields >> key;
        if (key != expected_key) fail("expected '" + std::string(expected_key) + "', found '" + key + "'");
      }
      return fields;
    }
    fail("unexpected end of file");
  }

  template <typename... T>
  void read(std::istringstream& fields, T&... values) {
    ((fields >> values), ...);
    if (fields.fail()) fail("malformed values");
    std::string extra;
    if (fields >> extra) fail("unexpected trailing field '" + extra + "'");
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("line " + std::to_string(line_no_) + ": " + what);
  }

  bool at_end() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line[0] != '#') return false;
    }
    return true;
  }

 private:
  std::istream& in_;
  int line_no_ = 0;
};

// Reads doubles as text so that "inf"/"nan" and %.17g round-trip through strtod.
double parse_double(const std::string& s, const LineReader& reader) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') reader.fail("bad number '" + s + "'");
  return v;
}

}  // namespace

void write_grid(std::ostream& out, const VoxelCloud& cloud) {
  const auto& d = cloud.dims();
  out << "# cloudtomo grid 1\n";
  out << "dims " << d[0] << ' ' << d[1] << ' ' << d[2] << '\n';
  out << "voxel_size " << format_double(cloud.voxel_size.x()) << ' ' << format_double(cloud.voxel_size.y()) << ' '
      << format_double(cloud.voxel_size.z()) << '\n';
  out << "base_height " << format_double(cloud.base_height) << '\n';
  out << "effective_variance " << format_double(cloud.effective_variance) << '\n';
  out << "records " << cloud.masked_count() << '\n';
  for (int i = 0; i < d[0]; ++i)
    for (int j = 0; j < d[1]; ++j)
      for (int k = 0; k < d[2]; ++k) {
        if (!cloud.mask(i, j, k)) continue;
        out << i << ' ' << j << ' ' << k << ' ' << format_double(cloud.lwc(i, j, k)) << ' '
            << format_double(cloud.re(i, j, k)) << '\n';
      }
}

VoxelCloud read_grid(std::istream& in) {
  LineReader reader(in);
  GridDims dims{};
  std::string vx, vy, vz, base, ve;
  long long records = 0;
  {
    auto f = reader.next("dims");
    reader.read(f, dims[0], dims[1], dims[2]);
  }
  {
    auto f = reader.next("voxel_size");
    reader.read(f, vx, vy, vz);
  }
  {
    auto f = reader.next("base_height");
    reader.read(f, base);
  }
  {
    auto f = reader.next("effective_variance");
    reader.read(f, ve);
  }
  {
    auto f = reader.next("records");
    reader.read(f, records);
  }
  if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0) reader.fail("dimensions must be positive");
  VoxelCloud cloud(dims,
                   {parse_double(vx, reader), parse_double(vy, reader), parse_double(vz, reader)},
                   parse_double(base, reader), parse_double(ve, reader));
  long long prev = -1;
  for (long long r = 0; r < records; ++r) {
    auto f = reader.next("");
    int i = 0, j = 0, k = 0;
    std::string lwc, re;
    reader.read(f, i, j, k, lwc, re);
    if (i < 0 || j < 0 || k < 0 || i >= dims[0] || j >= dims[1] || k >= dims[2]) reader.fail("voxel index out of range");
    const long long flat = cloud.lwc.index(i, j, k);
    if (flat <= prev) reader.fail("records must be in lexicographic order without repeats");
    prev = flat;
    cloud.mask[flat] = 1;
    cloud.lwc[flat] = parse_double(lwc, reader);
    cloud.re[flat] = parse_double(re, reader);
  }
  if (!reader.at_end()) reader.fail("more records than declared");
  return cloud;
}

void save_grid(const std::filesystem::path& file, const VoxelCloud& cloud) {
  std::ostringstream out;
  write_grid(out, cloud);
  save_text(file, out.str());
}

VoxelCloud load_grid(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  try {
    return read_grid(in);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(file.string() + ": " + e.what());
  }
}

void save_measurements(const std::filesystem::path& file, const MeasurementSet& set) {
  std::ostringstream out;
  auto d = [](double v) { return format_double(v); };
  out << "# cloudtomo measurements 1\n";
  out << "sun " << d(set.sun.zenith_deg) << ' ' << d(set.sun.azimuth_deg) << ' ' << d(set.sun.irradiance) << '\n';
  out << "band " << d(set.band.lambda_min) << ' ' << d(set.band.lambda_max) << ' '
      << set.band.toa_scale.wavelength_nm.size();
  for (std::size_t i = 0; i < set.band.toa_scale.wavelength_nm.size(); ++i)
    out << ' ' << d(set.band.toa_scale.wavelength_nm[i]) << ' ' << d(set.band.toa_scale.value[i]);
  out << '\n';
  out << "exposure " << d(set.exposure) << '\n';
  out << "seed " << set.seed << '\n';
  out << "saturated " << set.saturated_pixels << '\n';
  out << "views " << set.views.size() << '\n';
  for (const MeasuredView& v : set.views) {
    const Camera& c = v.camera;
    out << "view " << v.satellite << ' ' << (v.cloudbow ? 1 : 0) << ' ' << c.resolution << '\n';
    out << "camera " << d(c.position.x()) << ' ' << d(c.position.y()) << ' ' << d(c.position.z()) << ' '
        << d(c.optical_axis.x()) << ' ' << d(c.optical_axis.y()) << ' ' << d(c.optical_axis.z()) << ' '
        << d(c.roll_deg) << ' ' << d(c.focal_length) << ' ' << d(c.aperture) << ' ' << d(c.pixel_pitch) << '\n';
    for (Eigen::Index p = 0; p < v.image.size(); ++p)
      out << d(v.image.I[p]) << ' ' << d(v.image.Q[p]) << ' ' << d(v.image.U[p]) << '\n';
  }
  save_text(file, out.str());
}

MeasurementSet load_measurements(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  LineReader reader(in);
  auto num = [&](std::istringstream& f) {
    std::string s;
    if (!(f >> s)) reader.fail("missing value");
    return parse_double(s, reader);
  };
  auto done = [&](std::istringstream& f) {
    std::string extra;
    if (f >> extra) reader.fail("unexpected trailing field '" + extra + "'");
  };
  try {
    MeasurementSet set;
    {
      auto f = reader.next("sun");
      set.sun.zenith_deg = num(f);
      set.sun.azimuth_deg = num(f);
      set.sun.irradiance = num(f);
      done(f);
    }
    {
      auto f = reader.next("band");
      set.band.lambda_min = num(f);
      set.band.lambda_max = num(f);
      std::size_t n = 0;
      if (!(f >> n) || n == 0) reader.fail("bad band curve size");
      set.band.toa_scale = {};
      for (std::size_t i = 0; i < n; ++i) {
        set.band.toa_scale.wavelength_nm.push_back(num(f));
        set.band.toa_scale.value.push_back(num(f));
      }
      done(f);
    }
    {
      auto f = reader.next("exposure");
      set.exposure = num(f);
      done(f);
    }
    {
      auto f = reader.next("seed");
      reader.read(f, set.seed);
    }
    {
      auto f = reader.next("saturated");
      reader.read(f, set.saturated_pixels);
    }
    std::size_t count = 0;
    {
      auto f = reader.next("views");
      reader.read(f, count);
    }
    for (std::size_t vi = 0; vi < count; ++vi) {
      MeasuredView v;
      int cloudbow = 0;
      {
        auto f = reader.next("view");
        reader.read(f, v.satellite, cloudbow, v.camera.resolution);
      }
      v.cloudbow = cloudbow != 0;
      if (v.camera.resolution <= 0) reader.fail("resolution must be positive");
      {
        auto f = reader.next("camera");
        Camera& c = v.camera;
        c.position = {num(f), num(f), num(f)};
        c.optical_axis = {num(f), num(f), num(f)};
        c.roll_deg = num(f);
        c.focal_length = num(f);
        c.aperture = num(f);
        c.pixel_pitch = num(f);
        done(f);
      }
      v.image = StokesImage(v.camera.resolution, v.camera.resolution);
      for (Eigen::Index p = 0; p < v.image.size(); ++p) {
        auto f = reader.next("");
        v.image.I[p] = num(f);
        v.image.Q[p] = num(f);
        v.image.U[p] = num(f);
        done(f);
      }
      set.views.push_back(std::move(v));
    }
    if (!reader.at_end()) reader.fail("trailing content after the last view");
    return set;
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(file.string() + ": " + e.what());
  }
}

void save_pgm16(const std::filesystem::path& file, const Eigen::ArrayXd& values, int width, int height) {
  if (values.size() != static_cast<Eigen::Index>(width) * height || width <= 0 || height <= 0)
    throw std::invalid_argument("image size does not match its dimensions");
  const double lo = values.minCoeff(), hi = values.maxCoeff();
  const double scale = hi > lo ? (hi - lo) / 65535.0 : 0.0;
  std::ostringstream out;
  out << "P5\n# value = offset + scale * pixel; offset " << format_double(lo) << " scale " << format_double(scale)
      << '\n'
      << width << ' ' << height << "\n65535\n";
  // Row 0 of the image is the bottom (v grows up), PGM starts at the top.
  for (int row = height - 1; row >= 0; --row) {
    for (int col = 0; col < width; ++col) {
      const double v = values[static_cast<Eigen::Index>(row) * width + col];
      const auto level = static_cast<std::uint16_t>(scale > 0.0 ? std::clamp(std::lround((v - lo) / scale), 0L, 65535L) : 0);
      out.put(static_cast<char>(level >> 8));
      out.put(static_cast<char>(level & 0xff));
    }
  }
  save_text(file, out.str());
}

void save_csv(const std::filesystem::path& file, const std::vector<std::string>& header,
              const std::vector<std::vector<double>>& rows) {
  std::ostringstream out;
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& row : rows) {
    if (row.size() != header.size()) throw std::invalid_argument("CSV row width does not match the header");
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_double(row[i]);
    out << '\n';
  }
  save_text(file, out.str());
}

}  // namespace cloudtomo
