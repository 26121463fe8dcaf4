#pragma once

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "diffguide/augment.hpp"

namespace diffguide {

// ---------------------------------------------------------------------------
// PPM (P6) image IO — dependency-free storage for fixtures and tests.

inline void write_ppm(const std::string& path, const Tensor& img) {
  if (img.ndim() != 3 || img.dim(0) != 3)
    throw std::invalid_argument("write_ppm: expect [3,H,W]");
  int H = img.dim(1), W = img.dim(2);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
  f << "P6\n" << W << " " << H << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(W) * 3);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        row[static_cast<size_t>(x) * 3 + c] = static_cast<unsigned char>(
            std::clamp(std::lround(img.data[(static_cast<size_t>(c) * H + y) * W + x] * 255.0),
                       0l, 255l));
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw std::runtime_error("write_ppm: write failed for " + path);
}

inline Tensor read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: not a P6 file: " + path);
  auto next_token = [&]() {
    std::string tok;
    while (f >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(f, rest);
        continue;
      }
      return tok;
    }
    throw std::runtime_error("read_ppm: truncated header in " + path);
  };
  int W = std::stoi(next_token());
  int H = std::stoi(next_token());
  int maxval = std::stoi(next_token());
  if (W < 1 || H < 1 || maxval != 255)
    throw std::runtime_error("read_ppm: unsupported header in " + path);
  f.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(static_cast<size_t>(W) * H * 3);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (f.gcount() != static_cast<std::streamsize>(raw.size()))
    throw std::runtime_error("read_ppm: truncated pixel data in " + path);
  Tensor img({3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        img.data[(static_cast<size_t>(c) * H + y) * W + x] =
            raw[(static_cast<size_t>(y) * W + x) * 3 + c] / 255.0;
  return img;
}

// ---------------------------------------------------------------------------
// Annotation loading. The annotation file is JSON:
//   {"images": [{"id": ..., "file": ..., "domain": ...,
//                "boxes": [{"x":..,"y":..,"w":..,"h":..,"label":..}, ...]}]}
// Stored boxes use (x, y, w, h); in memory we keep (x1, y1, x2, y2).

struct LoadedDataset {
  std::vector<ImageSample> samples;
  int dropped_zero_area = 0;  // warning count, reported by callers
};

inline LoadedDataset load_dataset(const std::string& annotation_path,
                                  const std::string& image_root) {
  std::ifstream f(annotation_path);
  if (!f) throw std::runtime_error("load_dataset: cannot open " + annotation_path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("load_dataset: malformed JSON in " + annotation_path +
                             ": " + e.what());
  }
  if (!doc.contains("images") || !doc["images"].is_array())
    throw std::runtime_error("load_dataset: missing 'images' array in " +
                             annotation_path);

  LoadedDataset out;
  std::vector<std::string> missing;
  size_t idx = 0;
  for (const auto& rec : doc["images"]) {
    try {
      ImageSample s;
      s.image_id = rec.at("id").get<std::string>();
      s.domain_tag = rec.value("domain", std::string{});
      std::filesystem::path p =
          std::filesystem::path(image_root) / rec.at("file").get<std::string>();
      if (!std::filesystem::exists(p)) {
        missing.push_back(s.image_id);
        ++idx;
        continue;
      }
      s.image = read_ppm(p.string());
      for (const auto& b : rec.value("boxes", nlohmann::json::array())) {
        double x = b.at("x").get<double>(), y = b.at("y").get<double>();
        double w = b.at("w").get<double>(), h = b.at("h").get<double>();
        if (w <= 0.0 || h <= 0.0) {
          ++out.dropped_zero_area;
          continue;
        }
        s.boxes.boxes.push_back({x, y, x + w, y + h});
        s.boxes.labels.push_back(b.at("label").get<int>());
      }
      out.samples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("load_dataset: malformed record " +
                               std::to_string(idx) + " in " + annotation_path +
                               ": " + e.what());
    }
    ++idx;
  }
  if (!missing.empty()) {
    std::string msg = "load_dataset: missing image files for ids:";
    for (const auto& m : missing) msg += " " + m;
    throw std::runtime_error(msg);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic two-domain fixture: 64x64 scenes of bright geometric shapes
// (class 0 = rectangle, class 1 = disk) over domain-specific palettes.
// Domain A and domain B differ in background, object colors, and texture,
// so a detector trained on A sees a visible shift on B.

namespace fixture_detail {

struct Palette {
  std::array<double, 3> background, rect, disk;
  double stripe_amp;  // horizontal stripe texture strength
};

inline Palette palette_for(const std::string& domain) {
  if (domain == "A") return {{0.10, 0.12, 0.25}, {0.85, 0.20, 0.15}, {0.15, 0.80, 0.25}, 0.0};
  if (domain == "B") return {{0.70, 0.65, 0.55}, {0.60, 0.15, 0.70}, {0.95, 0.75, 0.10}, 0.08};
  throw std::invalid_argument("fixture: unknown domain " + domain);
}

}  // namespace fixture_detail

inline ImageSample make_fixture_sample(const std::string& image_id,
                                       const std::string& domain, uint64_t seed,
                                       int size = 64) {
  fixture_detail::Palette pal = fixture_detail::palette_for(domain);
  Rng rng(derive_seed(seed, "fixture/" + domain + "/" + image_id));
  ImageSample s;
  s.image_id = image_id;
  s.domain_tag = domain;
  s.image = Tensor({3, size, size});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        double v = pal.background[static_cast<size_t>(c)] + 0.02 * rng.normal();
        v += pal.stripe_amp * ((y / 4) % 2 ? 1.0 : -1.0);
        s.image.at({c, y, x}) = std::clamp(v, 0.0, 1.0);
      }

  int nobj = 1 + static_cast<int>(rng.uniform_int(0, 1));
  for (int o = 0; o < nobj; ++o) {
    int label = static_cast<int>(rng.uniform_int(0, 1));
    double side = rng.uniform(14.0, 26.0);
    double cx = rng.uniform(side / 2 + 2, size - side / 2 - 2);
    double cy = rng.uniform(side / 2 + 2, size - side / 2 - 2);
    const auto& col = label == 0 ? pal.rect : pal.disk;
    double x1 = cx - side / 2, y1 = cy - side / 2;
    double x2 = cx + side / 2, y2 = cy + side / 2;
    for (int y = std::max(0, static_cast<int>(y1)); y < std::min(size, static_cast<int>(y2) + 1); ++y)
      for (int x = std::max(0, static_cast<int>(x1)); x < std::min(size, static_cast<int>(x2) + 1); ++x) {
        bool inside;
        if (label == 0) {
          inside = x + 0.5 >= x1 && x + 0.5 <= x2 && y + 0.5 >= y1 && y + 0.5 <= y2;
        } else {
          double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
          inside = dx * dx + dy * dy <= (side / 2) * (side / 2);
        }
        if (!inside) continue;
        for (int c = 0; c < 3; ++c)
          s.image.at({c, y, x}) =
              std::clamp(col[static_cast<size_t>(c)] + 0.02 * rng.normal(), 0.0, 1.0);
      }
    s.boxes.boxes.push_back({x1, y1, x2, y2});
    s.boxes.labels.push_back(label);
  }
  return s;
}

// Writes images plus train/eval annotation files under dir:
//   train_A.json (domain A), eval_A.json (held-out A), eval_B.json (domain B)
inline void make_fixture(const std::string& dir, int n_train, int n_eval,
                         uint64_t seed, int size = 64) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  auto emit = [&](const std::string& tag, const std::string& domain, int count,
                  uint64_t salt) {
    nlohmann::json doc;
    doc["images"] = nlohmann::json::array();
    for (int i = 0; i < count; ++i) {
      std::string id = tag + std::to_string(i);
      ImageSample s = make_fixture_sample(id, domain, derive_seed(seed, tag, salt + i), size);
      std::string file = "images/" + id + ".ppm";
      write_ppm((fs::path(dir) / file).string(), s.image);
      nlohmann::json rec;
      rec["id"] = id;
      rec["file"] = file;
      rec["domain"] = domain;
      rec["boxes"] = nlohmann::json::array();
      for (size_t b = 0; b < s.boxes.size(); ++b) {
        const Box& box = s.boxes.boxes[b];
        rec["boxes"].push_back({{"x", box[0]},
                                {"y", box[1]},
                                {"w", box[2] - box[0]},
                                {"h", box[3] - box[1]},
                                {"label", s.boxes.labels[b]}});
      }
      doc["images"].push_back(rec);
    }
    std::ofstream f((fs::path(dir) / (tag + ".json")).string());
    f << doc.dump(2) << "\n";
  };
  emit("train_A", "A", n_train, 0);
  emit("eval_A", "A", n_eval, 10000);
  emit("eval_B", "B", n_eval, 20000);
}

}  // namespace diffguide
