#include "spda/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace spda::synth {

namespace fs = std::filesystem;
using nlohmann::json;

void SynthParams::validate() const {
  if (n_cases < 1) throw ConfigError("synth: n_cases must be >= 1");
  if (prevalence < 0.0 || prevalence > 1.0) throw ConfigError("synth: prevalence must be in [0,1]");
  const double s = size_mix[0] + size_mix[1] + size_mix[2];
  if (std::abs(s - 1.0) > 1e-9) {
    throw ConfigError("synth: size mix weights must sum to 1, got " + std::to_string(s));
  }
  for (double w : size_mix) {
    if (w < 0.0) throw ConfigError("synth: size mix weights must be non-negative");
  }
  for (int64_t d : shape) {
    if (d < 8) throw ConfigError("synth: volume dims must be >= 8");
  }
  if (voxel_volume_mm3 <= 0.0) throw ConfigError("synth: voxel volume must be positive");
}

Tensor zscore_normalize(const Tensor& volume) {
  if (volume.rank() < 2) throw ShapeError("zscore_normalize: expected [C,...]");
  const int64_t c = volume.dim(0);
  const int64_t n = volume.numel() / c;
  Tensor out = volume.clone();
  auto v = out.values();
  for (int64_t ch = 0; ch < c; ++ch) {
    double* p = v.data() + ch * n;
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += p[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double t = p[i] - mean;
      var += t * t;
    }
    const double stddev = std::sqrt(var / static_cast<double>(n));
    if (stddev < 1e-12) {
      for (int64_t i = 0; i < n; ++i) p[i] = 0.0;
    } else {
      for (int64_t i = 0; i < n; ++i) p[i] = (p[i] - mean) / stddev;
    }
  }
  return out;
}

namespace {

// 3-tap box blur along each axis, run twice; cheap approximation of a
// Gaussian smoothing for the background texture.
void smooth_field(std::vector<double>& f, int64_t h, int64_t w, int64_t d) {
  std::vector<double> tmp(f.size());
  auto idx = [&](int64_t z, int64_t y, int64_t x) { return (z * w + y) * d + x; };
  for (int pass = 0; pass < 2; ++pass) {
    for (int64_t z = 0; z < h; ++z) {
      for (int64_t y = 0; y < w; ++y) {
        for (int64_t x = 0; x < d; ++x) {
          double s = 0.0;
          int cnt = 0;
          for (int64_t t = std::max<int64_t>(0, z - 1); t <= std::min(h - 1, z + 1); ++t) {
            s += f[static_cast<size_t>(idx(t, y, x))];
            ++cnt;
          }
          tmp[static_cast<size_t>(idx(z, y, x))] = s / cnt;
        }
      }
    }
    for (int64_t z = 0; z < h; ++z) {
      for (int64_t y = 0; y < w; ++y) {
        for (int64_t x = 0; x < d; ++x) {
          double s = 0.0;
          int cnt = 0;
          for (int64_t t = std::max<int64_t>(0, y - 1); t <= std::min(w - 1, y + 1); ++t) {
            s += tmp[static_cast<size_t>(idx(z, t, x))];
            ++cnt;
          }
          f[static_cast<size_t>(idx(z, y, x))] = s / cnt;
        }
      }
    }
    for (int64_t z = 0; z < h; ++z) {
      for (int64_t y = 0; y < w; ++y) {
        for (int64_t x = 0; x < d; ++x) {
          double s = 0.0;
          int cnt = 0;
          for (int64_t t = std::max<int64_t>(0, x - 1); t <= std::min(d - 1, x + 1); ++t) {
            s += f[static_cast<size_t>(idx(z, y, t))];
            ++cnt;
          }
          tmp[static_cast<size_t>(idx(z, y, x))] = s / cnt;
        }
      }
    }
    f.swap(tmp);
  }
}

struct LesionGeometry {
  std::array<double, 3> center;
  std::array<double, 3> sigma;
  std::vector<int64_t> voxels;  // linear indices into the H*W*D grid
};

constexpr double kHalfMaxQ = 2.0 * 0.6931471805599453;  // 2 ln 2

// Voxels where the Gaussian bump is at least half its peak.
LesionGeometry carve_lesion(const std::array<double, 3>& center, const std::array<double, 3>& sigma,
                            int64_t h, int64_t w, int64_t d) {
  LesionGeometry g{center, sigma, {}};
  const double rz = sigma[0] * std::sqrt(kHalfMaxQ);
  const double ry = sigma[1] * std::sqrt(kHalfMaxQ);
  const double rx = sigma[2] * std::sqrt(kHalfMaxQ);
  const int64_t z0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(center[0] - rz)));
  const int64_t z1 = std::min(h - 1, static_cast<int64_t>(std::ceil(center[0] + rz)));
  const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(center[1] - ry)));
  const int64_t y1 = std::min(w - 1, static_cast<int64_t>(std::ceil(center[1] + ry)));
  const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(center[2] - rx)));
  const int64_t x1 = std::min(d - 1, static_cast<int64_t>(std::ceil(center[2] + rx)));
  for (int64_t z = z0; z <= z1; ++z) {
    for (int64_t y = y0; y <= y1; ++y) {
      for (int64_t x = x0; x <= x1; ++x) {
        const double dz = (static_cast<double>(z) - center[0]) / sigma[0];
        const double dy = (static_cast<double>(y) - center[1]) / sigma[1];
        const double dx = (static_cast<double>(x) - center[2]) / sigma[2];
        if (dz * dz + dy * dy + dx * dx <= kHalfMaxQ) {
          g.voxels.push_back((z * w + y) * d + x);
        }
      }
    }
  }
  return g;
}

// Rejects placements that touch the existing mask or its 26-neighborhood so
// lesions stay separate connected components.
bool touches_mask(const LesionGeometry& g, const std::vector<uint8_t>& mask, int64_t h, int64_t w,
                  int64_t d) {
  for (int64_t lin : g.voxels) {
    const int64_t z = lin / (w * d);
    const int64_t y = (lin / d) % w;
    const int64_t x = lin % d;
    for (int64_t dz = -1; dz <= 1; ++dz) {
      for (int64_t dy = -1; dy <= 1; ++dy) {
        for (int64_t dx = -1; dx <= 1; ++dx) {
          const int64_t z2 = z + dz, y2 = y + dy, x2 = x + dx;
          if (z2 < 0 || z2 >= h || y2 < 0 || y2 >= w || x2 < 0 || x2 >= d) continue;
          if (mask[static_cast<size_t>((z2 * w + y2) * d + x2)]) return true;
        }
      }
    }
  }
  return false;
}

int sample_size_class(Rng& rng, const std::array<double, 3>& mix) {
  const double u = rng.uniform();
  if (u < mix[0]) return 0;
  if (u < mix[0] + mix[1]) return 1;
  return 2;
}

}  // namespace

SynthCase generate_case(const SynthParams& params, uint64_t case_seed, const std::string& id) {
  const int64_t h = params.shape[0], w = params.shape[1], d = params.shape[2];
  const int64_t vol = h * w * d;
  Rng rng(case_seed);

  SynthCase c;
  c.id = id;
  c.shape = params.shape;
  c.seed = case_seed;
  c.has_lesion = rng.uniform() < params.prevalence;

  // Background: correlated smoothed noise plus a soft central "gland"
  // ellipsoid, mimicking the three-sequence structure (T2W / DWI / ADC).
  std::vector<double> shared(static_cast<size_t>(vol));
  for (double& v : shared) v = rng.normal();
  std::array<std::vector<double>, 3> chan;
  for (int ci = 0; ci < 3; ++ci) {
    chan[static_cast<size_t>(ci)].resize(static_cast<size_t>(vol));
    for (int64_t i = 0; i < vol; ++i) {
      chan[static_cast<size_t>(ci)][static_cast<size_t>(i)] =
          0.55 * shared[static_cast<size_t>(i)] + 0.45 * rng.normal();
    }
    smooth_field(chan[static_cast<size_t>(ci)], h, w, d);
  }

  const std::array<double, 3> gland_center = {0.5 * (h - 1) + rng.uniform(-1.0, 1.0),
                                              0.5 * (w - 1) + rng.uniform(-1.0, 1.0),
                                              0.5 * (d - 1) + rng.uniform(-1.0, 1.0)};
  const std::array<double, 3> gland_axes = {0.36 * h * rng.uniform(0.95, 1.05),
                                            0.36 * w * rng.uniform(0.95, 1.05),
                                            0.30 * d * rng.uniform(0.95, 1.05)};
  const std::array<double, 3> gland_gain = {1.1, 0.7, 0.9};
  for (int64_t z = 0; z < h; ++z) {
    for (int64_t y = 0; y < w; ++y) {
      for (int64_t x = 0; x < d; ++x) {
        const double rz = (static_cast<double>(z) - gland_center[0]) / gland_axes[0];
        const double ry = (static_cast<double>(y) - gland_center[1]) / gland_axes[1];
        const double rx = (static_cast<double>(x) - gland_center[2]) / gland_axes[2];
        const double rho = std::sqrt(rz * rz + ry * ry + rx * rx);
        const double profile = 1.0 / (1.0 + std::exp(10.0 * (rho - 1.0)));
        const int64_t lin = (z * w + y) * d + x;
        for (int ci = 0; ci < 3; ++ci) {
          chan[static_cast<size_t>(ci)][static_cast<size_t>(lin)] +=
              gland_gain[static_cast<size_t>(ci)] * profile;
        }
      }
    }
  }

  std::vector<uint8_t> mask(static_cast<size_t>(vol), 0);
  if (c.has_lesion) {
    // A small satellite lesion joins occasionally when the grid can separate
    // two components; size_mix governs the primary lesion.
    const int64_t min_dim = std::min({h, w, d});
    int n_lesions = 1;
    if (min_dim >= 12 && rng.uniform() < 0.15) n_lesions = 2;

    for (int li = 0; li < n_lesions; ++li) {
      bool placed = false;
      for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        // Second and later lesions are forced small so they fit on coarse grids.
        const int cls = li == 0 ? sample_size_class(rng, params.size_mix) : 0;
        static constexpr double kSigmaLo[3] = {1.05, 1.9, 2.9};
        static constexpr double kSigmaHi[3] = {1.55, 2.5, 3.6};
        const double base = rng.uniform(kSigmaLo[cls], kSigmaHi[cls]);
        std::array<double, 3> sigma;
        for (int a = 0; a < 3; ++a) sigma[static_cast<size_t>(a)] = base * rng.uniform(0.8, 1.2);

        std::array<double, 3> center;
        bool in_range = true;
        const std::array<int64_t, 3> dims = {h, w, d};
        for (int a = 0; a < 3; ++a) {
          const double margin = sigma[static_cast<size_t>(a)] * std::sqrt(kHalfMaxQ) + 1.5;
          const double lo = margin;
          const double hi = static_cast<double>(dims[static_cast<size_t>(a)] - 1) - margin;
          if (lo >= hi) {
            in_range = false;
            break;
          }
          center[static_cast<size_t>(a)] = rng.uniform(lo, hi);
        }
        if (!in_range) continue;

        LesionGeometry g = carve_lesion(center, sigma, h, w, d);
        if (g.voxels.empty() || touches_mask(g, mask, h, w, d)) continue;

        for (int64_t lin : g.voxels) mask[static_cast<size_t>(lin)] = 1;
        // Bright in DWI (channel 1), dark in ADC (channel 2), mildly dark in
        // T2W (channel 0).
        for (int64_t z = 0; z < h; ++z) {
          for (int64_t y = 0; y < w; ++y) {
            for (int64_t x = 0; x < d; ++x) {
              const double dz = (static_cast<double>(z) - center[0]) / sigma[0];
              const double dy = (static_cast<double>(y) - center[1]) / sigma[1];
              const double dx = (static_cast<double>(x) - center[2]) / sigma[2];
              const double q = dz * dz + dy * dy + dx * dx;
              if (q > 9.0) continue;
              const double bump = std::exp(-0.5 * q);
              const int64_t lin = (z * w + y) * d + x;
              chan[0][static_cast<size_t>(lin)] -= 0.7 * bump;
              chan[1][static_cast<size_t>(lin)] += 2.4 * bump;
              chan[2][static_cast<size_t>(lin)] -= 2.2 * bump;
            }
          }
        }

        LesionRecord rec;
        rec.centroid = center;
        for (int a = 0; a < 3; ++a) {
          rec.radius[static_cast<size_t>(a)] = sigma[static_cast<size_t>(a)] * std::sqrt(kHalfMaxQ);
        }
        rec.volume_voxels = static_cast<int64_t>(g.voxels.size());
        rec.size_class = cls;
        c.lesions.push_back(rec);
        placed = true;
      }
      if (!placed) {
        throw Error("synth: lesion placement failed after 100 attempts (volume too small "
                    "for requested lesion count)");
      }
    }
  }

  std::vector<double> volume_data;
  volume_data.reserve(static_cast<size_t>(3 * vol));
  for (int ci = 0; ci < 3; ++ci) {
    volume_data.insert(volume_data.end(), chan[static_cast<size_t>(ci)].begin(),
                       chan[static_cast<size_t>(ci)].end());
  }
  c.volume = zscore_normalize(Tensor::from_vector({3, h, w, d}, std::move(volume_data)));
  std::vector<double> mask_data(mask.begin(), mask.end());
  c.mask = Tensor::from_vector({h, w, d}, std::move(mask_data));
  c.has_lesion = !c.lesions.empty();
  return c;
}

std::vector<SynthCase> generate_dataset(const SynthParams& params, uint64_t master_seed) {
  params.validate();
  uint64_t state = master_seed;
  std::vector<uint64_t> seeds(static_cast<size_t>(params.n_cases));
  for (auto& s : seeds) s = splitmix64(state);

  std::vector<SynthCase> cases;
  cases.reserve(seeds.size());
  for (size_t i = 0; i < seeds.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "case_%05zu", i);
    cases.push_back(generate_case(params, seeds[i], buf));
  }
  return cases;
}

// ---------------------------------------------------------------------------
// On-disk format

namespace {

constexpr char kCaseMagic[4] = {'S', 'P', 'D', 'A'};
constexpr uint16_t kCaseVersion = 1;

const uint32_t* crc_table() {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    init = true;
  }
  return table;
}

}  // namespace

uint32_t crc32(const uint8_t* data, size_t len) {
  const uint32_t* table = crc_table();
  uint32_t c = 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void save_case(const SynthCase& c, const std::string& path) {
  json header;
  header["id"] = c.id;
  header["shape"] = c.shape;
  header["channels"] = 3;
  header["has_lesion"] = c.has_lesion;
  header["seed"] = c.seed;
  json lesions = json::array();
  for (const LesionRecord& r : c.lesions) {
    lesions.push_back({{"centroid", r.centroid},
                       {"radius", r.radius},
                       {"volume_voxels", r.volume_voxels},
                       {"size_class", r.size_class}});
  }
  header["lesions"] = lesions;
  header["volume_dtype"] = "f64le";
  header["mask_packing"] = "bit-lsb";
  const std::string hs = header.dump();

  const int64_t vol = c.shape[0] * c.shape[1] * c.shape[2];
  std::vector<uint8_t> payload;
  payload.resize(static_cast<size_t>(3 * vol) * sizeof(double) + static_cast<size_t>((vol + 7) / 8), 0);
  std::memcpy(payload.data(), c.volume.values().data(), static_cast<size_t>(3 * vol) * sizeof(double));
  uint8_t* mask_bytes = payload.data() + static_cast<size_t>(3 * vol) * sizeof(double);
  auto mv = c.mask.values();
  for (int64_t i = 0; i < vol; ++i) {
    if (mv[static_cast<size_t>(i)] != 0.0) mask_bytes[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
  }
  const uint32_t checksum = crc32(payload.data(), payload.size());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open case file for writing: " + path);
  out.write(kCaseMagic, 4);
  out.write(reinterpret_cast<const char*>(&kCaseVersion), sizeof(kCaseVersion));
  const uint32_t hlen = static_cast<uint32_t>(hs.size());
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  out.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
  if (!out) throw IoError("failed writing case file: " + path);
}

SynthCase load_case(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open case file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCaseMagic, 4) != 0) {
    throw IoError("not a dataset case file (bad magic): " + path);
  }
  uint16_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != kCaseVersion) {
    throw IoError("unsupported case file version in " + path);
  }
  uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in) throw IoError("truncated case file: " + path);
  std::string hs(hlen, '\0');
  in.read(hs.data(), hlen);
  if (!in) throw IoError("truncated case file: " + path);

  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    throw IoError("corrupt case header in " + path + ": " + e.what());
  }

  SynthCase c;
  c.id = header.at("id").get<std::string>();
  c.shape = header.at("shape").get<std::array<int64_t, 3>>();
  c.has_lesion = header.at("has_lesion").get<bool>();
  c.seed = header.at("seed").get<uint64_t>();
  for (const json& r : header.at("lesions")) {
    LesionRecord rec;
    rec.centroid = r.at("centroid").get<std::array<double, 3>>();
    rec.radius = r.at("radius").get<std::array<double, 3>>();
    rec.volume_voxels = r.at("volume_voxels").get<int64_t>();
    rec.size_class = r.at("size_class").get<int>();
    c.lesions.push_back(rec);
  }

  const int64_t vol = c.shape[0] * c.shape[1] * c.shape[2];
  const size_t payload_len =
      static_cast<size_t>(3 * vol) * sizeof(double) + static_cast<size_t>((vol + 7) / 8);
  std::vector<uint8_t> payload(payload_len);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload_len));
  if (!in || in.gcount() != static_cast<std::streamsize>(payload_len)) {
    throw IoError("truncated case file: " + path);
  }
  uint32_t stored = 0;
  in.read(reinterpret_cast<char*>(&stored), sizeof(stored));
  if (!in) throw IoError("truncated case file (missing checksum): " + path);
  if (crc32(payload.data(), payload.size()) != stored) {
    throw IoError("checksum failure in case file: " + path);
  }

  std::vector<double> vdata(static_cast<size_t>(3 * vol));
  std::memcpy(vdata.data(), payload.data(), vdata.size() * sizeof(double));
  c.volume = Tensor::from_vector({3, c.shape[0], c.shape[1], c.shape[2]}, std::move(vdata));
  const uint8_t* mask_bytes = payload.data() + static_cast<size_t>(3 * vol) * sizeof(double);
  std::vector<double> mdata(static_cast<size_t>(vol), 0.0);
  for (int64_t i = 0; i < vol; ++i) {
    if (mask_bytes[i / 8] & (1u << (i % 8))) mdata[static_cast<size_t>(i)] = 1.0;
  }
  c.mask = Tensor::from_vector({c.shape[0], c.shape[1], c.shape[2]}, std::move(mdata));
  return c;
}

void write_dataset(const std::vector<SynthCase>& cases, const SynthParams& params,
                   uint64_t master_seed, const std::string& dir,
                   const std::string& config_echo_json) {
  fs::create_directories(fs::path(dir) / "cases");
  json manifest;
  manifest["format"] = "spda-dataset";
  manifest["version"] = 1;
  manifest["tool"] = {{"name", kToolName}, {"version", kToolVersion}};
  manifest["master_seed"] = master_seed;
  manifest["params"] = {{"n_cases", params.n_cases},
                        {"prevalence", params.prevalence},
                        {"size_mix", params.size_mix},
                        {"shape", params.shape},
                        {"voxel_volume_mm3", params.voxel_volume_mm3}};
  if (!config_echo_json.empty()) manifest["config"] = json::parse(config_echo_json);
  json case_list = json::array();
  for (const SynthCase& c : cases) {
    const std::string rel = "cases/" + c.id + ".spda";
    save_case(c, (fs::path(dir) / rel).string());
    case_list.push_back({{"id", c.id},
                         {"file", rel},
                         {"label", c.has_lesion},
                         {"n_lesions", c.lesions.size()},
                         {"seed", c.seed}});
  }
  manifest["cases"] = case_list;

  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
}

std::vector<SynthCase> load_dataset(const std::string& dir) {
  const fs::path cases_dir = fs::path(dir) / "cases";
  if (!fs::is_directory(cases_dir)) {
    throw IoError("dataset directory has no cases/ subdirectory: " + dir);
  }
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(cases_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".spda") {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<SynthCase> cases;
  cases.reserve(files.size());
  for (const std::string& f : files) cases.push_back(load_case(f));
  return cases;
}

std::string read_manifest(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw IoError("missing manifest.json in " + dir);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace spda::synth
