#include "multicos/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "multicos/errors.hpp"
#include "multicos/ops.hpp"

namespace multicos {

namespace fs = std::filesystem;

namespace {

constexpr double kTextureAmplitude = 0.15;
constexpr double kAuxBase = 0.2;
constexpr double kAuxSignal = 0.6;
constexpr double kMinArea = 0.05, kMaxArea = 0.4;

using Plane = std::vector<double>;

/// Sum of a few low-frequency plane waves scaled to [-1, 1].
Plane band_limited_noise(std::mt19937_64& rng, int64_t h, int64_t w) {
  std::uniform_real_distribution<double> freq(0.5, 4.0), phase(0.0, 2 * std::numbers::pi), sign(-1.0, 1.0);
  constexpr int kWaves = 6;
  double fx[kWaves], fy[kWaves], ph[kWaves];
  for (int k = 0; k < kWaves; ++k) {
    fx[k] = freq(rng) * (sign(rng) < 0 ? -1 : 1);
    fy[k] = freq(rng) * (sign(rng) < 0 ? -1 : 1);
    ph[k] = phase(rng);
  }
  Plane p(static_cast<size_t>(h * w));
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      double s = 0;
      for (int k = 0; k < kWaves; ++k)
        s += std::sin(2 * std::numbers::pi * (fx[k] * static_cast<double>(j) / static_cast<double>(w) +
                                              fy[k] * static_cast<double>(i) / static_cast<double>(h)) +
                      ph[k]);
      p[static_cast<size_t>(i * w + j)] = s / kWaves;
    }
  return p;
}

Plane ellipse_union(std::mt19937_64& rng, int64_t h, int64_t w) {
  const double side = static_cast<double>(std::min(h, w));
  std::uniform_int_distribution<int> count(2, 5);
  std::uniform_real_distribution<double> centre(0.3, 0.7), offset(-0.15, 0.15), radius(0.06, 0.2),
      angle(0.0, std::numbers::pi);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Plane m(static_cast<size_t>(h * w), 0.0);
    const double cy = centre(rng) * static_cast<double>(h), cx = centre(rng) * static_cast<double>(w);
    const int n = count(rng);
    for (int e = 0; e < n; ++e) {
      const double ey = cy + (e == 0 ? 0.0 : offset(rng) * static_cast<double>(h));
      const double ex = cx + (e == 0 ? 0.0 : offset(rng) * static_cast<double>(w));
      const double ra = radius(rng) * side, rb = radius(rng) * side, th = angle(rng);
      const double c = std::cos(th), s = std::sin(th);
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
          const double dy = static_cast<double>(i) + 0.5 - ey, dx = static_cast<double>(j) + 0.5 - ex;
          const double u = (c * dx + s * dy) / ra, v = (-s * dx + c * dy) / rb;
          if (u * u + v * v <= 1.0) m[static_cast<size_t>(i * w + j)] = 1.0;
        }
    }
    double area = 0;
    for (double v : m) area += v;
    area /= static_cast<double>(h * w);
    if (area >= kMinArea && area <= kMaxArea) return m;
  }
  throw DomainError("could not place a foreground blob with the required area");
}

/// [1 2 1] x [1 2 1] / 16 with replicated borders.
Plane smooth3(const Plane& p, int64_t h, int64_t w) {
  auto at = [&](int64_t i, int64_t j) {
    i = std::clamp<int64_t>(i, 0, h - 1);
    j = std::clamp<int64_t>(j, 0, w - 1);
    return p[static_cast<size_t>(i * w + j)];
  };
  Plane out(p.size());
  const double k[3] = {1, 2, 1};
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      double s = 0;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) s += k[di + 1] * k[dj + 1] * at(i + di, j + dj);
      out[static_cast<size_t>(i * w + j)] = s / 16.0;
    }
  return out;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

SyntheticSample generate_one(uint64_t seed, uint64_t index, const SynthParams& p) {
  const int64_t h = p.height, w = p.width;
  if (h < 16 || w < 16) {
    throw InvalidDimensions("scenes need at least 16x16 pixels, got " + std::to_string(h) + "x" + std::to_string(w));
  }
  if (!(p.kappa >= 0.0 && p.kappa <= 1.0)) throw DomainError("kappa must lie in [0, 1]");
  if (!(p.snr > 0.0)) throw DomainError("snr must be positive");
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(index),
                    static_cast<uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);

  Plane mask = ellipse_union(rng, h, w);
  std::uniform_real_distribution<double> base(0.3, 0.7), shift(0.3, 0.45);
  const size_t n = static_cast<size_t>(h * w);
  std::vector<double> rgb(3 * n);
  for (size_t c = 0; c < 3; ++c) {
    const double b = base(rng);
    const double f = b < 0.5 ? b + shift(rng) : b - shift(rng);
    Plane bg = band_limited_noise(rng, h, w), fg = band_limited_noise(rng, h, w);
    for (size_t i = 0; i < n; ++i) {
      const double bg_tex = b + kTextureAmplitude * bg[i];
      const double fg_tex = f + kTextureAmplitude * fg[i];
      const double v = mask[i] > 0 ? p.kappa * bg_tex + (1 - p.kappa) * fg_tex : bg_tex;
      rgb[c * n + i] = clamp01(v);
    }
  }

  std::normal_distribution<double> noise(0.0, kAuxSignal / p.snr);
  Plane aux(n);
  for (size_t i = 0; i < n; ++i) aux[i] = kAuxBase + kAuxSignal * mask[i] + noise(rng);
  aux = smooth3(aux, h, w);
  for (double& v : aux) v = clamp01(v);

  SyntheticSample s;
  s.rgb = Tensor({3, h, w}, std::move(rgb));
  s.aux = Tensor({1, h, w}, std::move(aux));
  s.mask = Tensor({1, h, w}, std::move(mask));
  s.edge = morphological_gradient(s.mask);
  s.seed = seed;
  s.kappa = p.kappa;
  s.snr = p.snr;
  return s;
}

std::vector<SyntheticSample> generate(uint64_t seed, int64_t n, const SynthParams& p) {
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<size_t>(std::max<int64_t>(n, 0)));
  for (int64_t i = 0; i < n; ++i) out.push_back(generate_one(seed, static_cast<uint64_t>(i), p));
  return out;
}

Tensor morphological_gradient(const Tensor& mask) {
  const int64_t h = mask.dim(mask.rank() - 2), w = mask.dim(mask.rank() - 1);
  const int64_t planes = mask.numel() / (h * w);
  const auto& m = mask.values();
  std::vector<double> out(m.size());
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        double hi = 0.0, lo = 1.0;
        for (int64_t di = -1; di <= 1; ++di)
          for (int64_t dj = -1; dj <= 1; ++dj) {
            const int64_t ii = i + di, jj = j + dj;
            if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
            const double v = m[static_cast<size_t>((p * h + ii) * w + jj)];
            hi = std::max(hi, v);
            lo = std::min(lo, v);
          }
        out[static_cast<size_t>((p * h + i) * w + j)] = hi - lo;
      }
  return Tensor(mask.shape(), std::move(out));
}

SyntheticSample misalign(const SyntheticSample& s, double crop_fraction) {
  if (!(crop_fraction > 0.0 && crop_fraction <= 1.0)) throw DomainError("crop fraction must lie in (0, 1]");
  SyntheticSample out = s;
  const int64_t c = s.aux.dim(0), h = s.aux.dim(1), w = s.aux.dim(2);
  const int64_t ch = std::max<int64_t>(1, std::llround(crop_fraction * static_cast<double>(h)));
  const int64_t cw = std::max<int64_t>(1, std::llround(crop_fraction * static_cast<double>(w)));
  if (ch == h && cw == w) {
    out.aux = s.aux.clone();
    return out;
  }
  std::vector<double> crop(static_cast<size_t>(c * ch * cw));
  for (int64_t k = 0; k < c; ++k)
    for (int64_t i = 0; i < ch; ++i)
      for (int64_t j = 0; j < cw; ++j)
        crop[static_cast<size_t>((k * ch + i) * cw + j)] = s.aux.values()[static_cast<size_t>((k * h + i) * w + j)];
  NoGradGuard guard;
  Tensor resized = interpolate(Tensor({1, c, ch, cw}, std::move(crop)), h, w, InterpMode::kBilinear);
  out.aux = Tensor({c, h, w}, resized.values());
  return out;
}

double boundary_contrast(const Tensor& image, const Tensor& mask) {
  const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const auto& m = mask.values();
  auto fg = [&](int64_t i, int64_t j) { return m[static_cast<size_t>(i * w + j)] > 0.5; };
  double total = 0;
  for (int64_t k = 0; k < c; ++k) {
    double in_sum = 0, out_sum = 0, in_n = 0, out_n = 0;
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        bool border = false;
        const int64_t di[4] = {-1, 1, 0, 0}, dj[4] = {0, 0, -1, 1};
        for (int q = 0; q < 4; ++q) {
          const int64_t ii = i + di[q], jj = j + dj[q];
          if (ii >= 0 && ii < h && jj >= 0 && jj < w && fg(ii, jj) != fg(i, j)) border = true;
        }
        if (!border) continue;
        const double v = image.values()[static_cast<size_t>((k * h + i) * w + j)];
        if (fg(i, j)) {
          in_sum += v;
          ++in_n;
        } else {
          out_sum += v;
          ++out_n;
        }
      }
    if (in_n > 0 && out_n > 0) total += std::abs(in_sum / in_n - out_sum / out_n);
  }
  return total / static_cast<double>(c);
}

// ---------------------------------------------------------------- image I/O

void write_image(const fs::path& path, const Tensor& chw) {
  if (chw.rank() != 3 || (chw.dim(0) != 1 && chw.dim(0) != 3)) {
    throw ShapeMismatch("images are (1|3, H, W), got " + shape_str(chw.shape()));
  }
  const int64_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
  std::string bytes(static_cast<size_t>(c * h * w), '\0');
  const auto& v = chw.values();
  for (int64_t i = 0; i < h * w; ++i)
    for (int64_t k = 0; k < c; ++k) {
      const double x = clamp01(v[static_cast<size_t>(k * h * w + i)]);
      bytes[static_cast<size_t>(i * c + k)] = static_cast<char>(static_cast<unsigned char>(std::lround(x * 255.0)));
    }
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

Tensor parse_image(const std::string& bytes) {
  size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    const size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos == start || pos - start > 9) throw MalformedHeader(std::string("bad ") + what);
    return std::stoll(bytes.substr(start, pos - start));
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw MalformedHeader("expected P5 or P6 magic");
  }
  const int64_t c = bytes[1] == '5' ? 1 : 3;
  pos = 2;
  const int64_t w = number("width"), h = number("height"), maxval = number("maxval");
  if (w < 1 || h < 1) throw MalformedHeader("non-positive extent");
  if (maxval < 1 || maxval > 255) throw MalformedHeader("only 8-bit maxval is supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw MalformedHeader("missing separator before pixel data");
  }
  ++pos;
  const size_t need = static_cast<size_t>(c * h * w);
  if (bytes.size() - pos < need) throw MalformedHeader("pixel data truncated");
  std::vector<double> v(need);
  for (int64_t i = 0; i < h * w; ++i)
    for (int64_t k = 0; k < c; ++k)
      v[static_cast<size_t>(k * h * w + i)] =
          static_cast<double>(static_cast<unsigned char>(bytes[pos + static_cast<size_t>(i * c + k)])) /
          static_cast<double>(maxval);
  return Tensor({c, h, w}, std::move(v));
}

Tensor read_image(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_image(ss.str());
}

// ---------------------------------------------------------------- datasets

Batch make_batch(const std::vector<SyntheticSample>& samples, const std::vector<size_t>& indices) {
  auto stack = [&](Tensor SyntheticSample::*field) {
    const Tensor& first = samples.at(indices.at(0)).*field;
    if (first.rank() == 0) return Tensor();
    Shape shape{static_cast<int64_t>(indices.size())};
    shape.insert(shape.end(), first.shape().begin(), first.shape().end());
    std::vector<double> v;
    v.reserve(static_cast<size_t>(shape_numel(shape)));
    for (size_t i : indices) {
      const Tensor& t = samples.at(i).*field;
      if (t.shape() != first.shape()) throw ShapeMismatch("batch members differ in shape");
      v.insert(v.end(), t.values().begin(), t.values().end());
    }
    return Tensor(shape, std::move(v));
  };
  return Batch{stack(&SyntheticSample::rgb), stack(&SyntheticSample::aux), stack(&SyntheticSample::mask),
               stack(&SyntheticSample::edge)};
}

namespace {

std::string file_name(size_t i, const char* ext) {
  std::ostringstream os;
  os << std::setw(5) << std::setfill('0') << i << ext;
  return os.str();
}

nlohmann::json split_json(const SplitInfo& s) {
  return {{"seed", s.seed},
          {"count", s.count},
          {"height", s.params.height},
          {"width", s.params.width},
          {"kappa", s.params.kappa},
          {"snr", s.params.snr}};
}

SplitInfo split_from_json(const nlohmann::json& j) {
  SplitInfo s;
  s.seed = j.at("seed").get<uint64_t>();
  s.count = j.at("count").get<int64_t>();
  s.params.height = j.at("height").get<int64_t>();
  s.params.width = j.at("width").get<int64_t>();
  s.params.kappa = j.at("kappa").get<double>();
  s.params.snr = j.at("snr").get<double>();
  return s;
}

void write_split(const fs::path& dir, const std::vector<SyntheticSample>& samples, bool labelled) {
  std::vector<std::string> kinds{"rgb", "aux"};
  if (labelled) kinds.insert(kinds.end(), {"mask", "edge"});
  for (const auto& k : kinds) fs::create_directories(dir / k);
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    write_image(dir / "rgb" / file_name(i, ".ppm"), s.rgb);
    write_image(dir / "aux" / file_name(i, ".pgm"), s.aux);
    if (labelled) {
      write_image(dir / "mask" / file_name(i, ".pgm"), s.mask);
      write_image(dir / "edge" / file_name(i, ".pgm"), s.edge);
    }
  }
}

}  // namespace

void write_dataset(const fs::path& root, const DatasetManifest& manifest, const std::vector<SyntheticSample>& cos,
                   const std::vector<SyntheticSample>& translation) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
  write_split(root / "cos", cos, true);
  write_split(root / "translation", translation, false);
  nlohmann::json j = {{"format", "multicos-synthetic"},
                      {"version", 1},
                      {"cos", split_json(manifest.cos)},
                      {"translation", split_json(manifest.translation)}};
  std::ofstream os(root / "manifest.json");
  if (!os) throw IoError("cannot write manifest under " + root.string());
  os << j.dump(2) << '\n';
}

DatasetManifest read_manifest(const fs::path& root) {
  std::ifstream is(root / "manifest.json");
  if (!is) throw IoError("no manifest.json under " + root.string());
  try {
    nlohmann::json j = nlohmann::json::parse(is);
    return DatasetManifest{split_from_json(j.at("cos")), split_from_json(j.at("translation"))};
  } catch (const nlohmann::json::exception& e) {
    throw MalformedHeader(std::string("manifest.json: ") + e.what());
  }
}

std::vector<SyntheticSample> read_split(const fs::path& root, const std::string& split) {
  if (split != "cos" && split != "translation") throw ConfigError("unknown split " + split);
  const DatasetManifest m = read_manifest(root);
  const SplitInfo& info = split == "cos" ? m.cos : m.translation;
  const fs::path dir = root / split;
  std::vector<SyntheticSample> out;
  for (int64_t i = 0; i < info.count; ++i) {
    SyntheticSample s;
    s.rgb = read_image(dir / "rgb" / file_name(static_cast<size_t>(i), ".ppm"));
    s.aux = read_image(dir / "aux" / file_name(static_cast<size_t>(i), ".pgm"));
    if (split == "cos") {
      s.mask = read_image(dir / "mask" / file_name(static_cast<size_t>(i), ".pgm"));
      s.edge = read_image(dir / "edge" / file_name(static_cast<size_t>(i), ".pgm"));
    }
    s.seed = info.seed;
    s.kappa = info.params.kappa;
    s.snr = info.params.snr;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace multicos
