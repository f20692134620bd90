#include "sketchseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sketchseg/png_io.hpp"
#include "sketchseg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sketchseg {

int Dataset::label_id(const std::string& category) const {
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (vocab[i] == category) return static_cast<int>(i) + 1;
  }
  return 0;
}

std::vector<std::string> extract_categories(const std::string& caption,
                                            const std::vector<std::string>& lexicon) {
  std::vector<std::string> tokens;
  std::istringstream ss(caption);
  std::string tok;
  while (ss >> tok) {
    std::string clean;
    for (char c : tok) {
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '-') {
        clean.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      }
    }
    if (!clean.empty()) tokens.push_back(clean);
  }
  std::vector<std::string> found;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (const auto& entry : lexicon) {
      // Multi-word lexicon entries match a run of caption tokens.
      std::vector<std::string> words;
      std::istringstream es(entry);
      std::string w;
      while (es >> w) words.push_back(w);
      if (words.empty() || i + words.size() > tokens.size()) continue;
      bool match = true;
      for (std::size_t k = 0; k < words.size(); ++k) {
        if (tokens[i + k] != words[k]) {
          match = false;
          break;
        }
      }
      if (match && seen.insert(entry).second) found.push_back(entry);
    }
  }
  return found;
}

namespace {

Matf intensity_from_png(const std::string& path) {
  auto bytes = read_png_gray8(path);
  Matf out(bytes.rows(), bytes.cols());
  for (Index i = 0; i < bytes.size(); ++i) {
    out.data()[i] = static_cast<float>(bytes.data()[i]) / 255.0f;
  }
  return out;
}

std::vector<Stroke> read_strokes_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open strokes file: " + path);
  std::vector<Stroke> strokes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    Stroke s;
    s.id = j.at("id").get<int>();
    for (const auto& p : j.at("points")) {
      s.points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    }
    if (j.contains("width")) s.width = j.at("width").get<int>();
    strokes.push_back(std::move(s));
  }
  return strokes;
}

std::optional<DatasetSplit> load_split(const fs::path& split_dir, SplitRole role,
                                       const std::vector<std::string>& lexicon) {
  if (!fs::is_directory(split_dir)) return std::nullopt;
  const fs::path sketches_dir = split_dir / "sketches";
  const fs::path captions_path = split_dir / "captions.jsonl";
  if (!fs::is_directory(sketches_dir)) {
    throw std::runtime_error("split '" + split_dir.string() + "' has no sketches/ directory");
  }
  if (!fs::exists(captions_path)) {
    throw std::runtime_error("split '" + split_dir.string() + "' has no captions.jsonl");
  }

  std::map<std::string, CaptionRecord> captions;
  {
    std::ifstream in(captions_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      CaptionRecord rec;
      rec.sketch_id = j.at("id").get<std::string>();
      rec.caption = j.at("caption").get<std::string>();
      if (j.contains("categories") && !j.at("categories").empty()) {
        for (const auto& c : j.at("categories")) {
          std::string name = c.get<std::string>();
          std::transform(name.begin(), name.end(), name.begin(),
                         [](unsigned char ch) { return std::tolower(ch); });
          rec.categories.push_back(name);
        }
      } else {
        rec.categories = extract_categories(rec.caption, lexicon);
      }
      validate_caption(rec);
      captions[rec.sketch_id] = std::move(rec);
    }
  }

  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(sketches_dir)) {
    if (entry.path().extension() == ".png") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());  // deterministic lexicographic order

  DatasetSplit split;
  split.role = role;
  std::set<std::string> seen_ids;
  for (const auto& id : ids) {
    seen_ids.insert(id);
    auto cap = captions.find(id);
    if (cap == captions.end()) {
      throw std::runtime_error("sketch '" + id + "' in " + split_dir.string() +
                               " has no caption record");
    }
    DatasetItem item;
    item.id = id;
    item.bitmap = make_bitmap(intensity_from_png((sketches_dir / (id + ".png")).string()));
    item.caption = cap->second;

    const fs::path mask_path = split_dir / "masks" / (id + ".png");
    if (fs::exists(mask_path)) {
      auto bytes = read_png_gray8(mask_path.string());
      if (bytes.rows() != item.bitmap.height || bytes.cols() != item.bitmap.width) {
        throw std::runtime_error("mask for '" + id + "' is " + std::to_string(bytes.rows()) +
                                 "x" + std::to_string(bytes.cols()) + " but sketch is " +
                                 std::to_string(item.bitmap.height) + "x" +
                                 std::to_string(item.bitmap.width));
      }
      SegmentationMask mask;
      mask.height = bytes.rows();
      mask.width = bytes.cols();
      mask.labels = bytes.cast<int>();
      item.mask = std::move(mask);
    }

    const fs::path strokes_path = split_dir / "strokes" / (id + ".jsonl");
    if (fs::exists(strokes_path)) item.strokes = read_strokes_jsonl(strokes_path.string());

    split.items.push_back(std::move(item));
  }
  for (const auto& [id, rec] : captions) {
    if (!seen_ids.count(id)) {
      throw std::runtime_error("caption '" + id + "' in " + split_dir.string() +
                               " has no sketch bitmap");
    }
  }
  return split;
}

}  // namespace

Dataset load_dataset(const std::string& root_dir) {
  const fs::path root(root_dir);
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root not found: " + root_dir);

  Dataset ds;
  const fs::path labels_path = root / "labels.json";
  if (fs::exists(labels_path)) {
    std::ifstream in(labels_path);
    json j = json::parse(in);
    std::map<int, std::string> by_index;
    for (const auto& [key, value] : j.items()) {
      by_index[std::stoi(key)] = value.get<std::string>();
    }
    int expect = 1;
    for (const auto& [index, name] : by_index) {
      if (index != expect) {
        throw std::runtime_error("labels.json indices must be contiguous from 1; missing " +
                                 std::to_string(expect));
      }
      ds.vocab.push_back(name);
      ++expect;
    }
  }

  // Pass 1 when no labels.json: aggregate caption categories into a vocabulary.
  std::vector<std::string> lexicon = ds.vocab;
  ds.train = load_split(root / "train", SplitRole::kTrain, lexicon);
  ds.val = load_split(root / "val", SplitRole::kVal, lexicon);
  ds.test = load_split(root / "test", SplitRole::kTest, lexicon);
  if (!ds.train && !ds.val && !ds.test) {
    throw std::runtime_error("dataset root has no train/val/test splits: " + root_dir);
  }

  if (ds.vocab.empty()) {
    std::set<std::string> cats;
    for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
      if (!split->has_value()) continue;
      for (const auto& item : (*split)->items) {
        for (const auto& c : item.caption.categories) cats.insert(c);
      }
    }
    ds.vocab.assign(cats.begin(), cats.end());
  }
  return ds;
}

namespace {

void write_split(const DatasetSplit& split, const fs::path& root) {
  const fs::path dir = root / split_role_name(split.role);
  fs::create_directories(dir / "sketches");
  bool any_mask = false, any_strokes = false;
  for (const auto& item : split.items) {
    if (item.mask) any_mask = true;
    if (!item.strokes.empty()) any_strokes = true;
  }
  if (any_mask) fs::create_directories(dir / "masks");
  if (any_strokes) fs::create_directories(dir / "strokes");

  std::ofstream captions(dir / "captions.jsonl");
  for (const auto& item : split.items) {
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> bytes(
        item.bitmap.height, item.bitmap.width);
    for (Index i = 0; i < bytes.size(); ++i) {
      bytes.data()[i] =
          static_cast<std::uint8_t>(std::lround(item.bitmap.intensity.data()[i] * 255.0f));
    }
    write_png_gray8((dir / "sketches" / (item.id + ".png")).string(), bytes);

    json j;
    j["id"] = item.id;
    j["caption"] = item.caption.caption;
    j["categories"] = item.caption.categories;
    captions << j.dump() << "\n";

    if (item.mask) {
      Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> mask_bytes(
          item.mask->height, item.mask->width);
      for (Index i = 0; i < mask_bytes.size(); ++i) {
        mask_bytes.data()[i] = static_cast<std::uint8_t>(item.mask->labels.data()[i]);
      }
      write_png_gray8((dir / "masks" / (item.id + ".png")).string(), mask_bytes);
    }
    if (!item.strokes.empty()) {
      std::ofstream sf(dir / "strokes" / (item.id + ".jsonl"));
      for (const auto& s : item.strokes) {
        json sj;
        sj["id"] = s.id;
        json pts = json::array();
        for (const auto& [x, y] : s.points) pts.push_back({x, y});
        sj["points"] = pts;
        if (s.width != 1) sj["width"] = s.width;
        sf << sj.dump() << "\n";
      }
    }
  }
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::string& root_dir) {
  const fs::path root(root_dir);
  fs::create_directories(root);
  json labels = json::object();
  for (std::size_t i = 0; i < dataset.vocab.size(); ++i) {
    labels[std::to_string(i + 1)] = dataset.vocab[i];
  }
  std::ofstream lf(root / "labels.json");
  lf << labels.dump(2) << "\n";
  for (const auto* split : {&dataset.train, &dataset.val, &dataset.test}) {
    if (split->has_value()) write_split(**split, root);
  }
}

// --- synthetic glyphs -------------------------------------------------------

namespace {

// Glyph strokes centered at (cx, cy) with half-extent r, in (x, y) pixels.
std::vector<Stroke> glyph_strokes(const std::string& kind, double cx, double cy, double r,
                                  int first_stroke_id) {
  std::vector<Stroke> strokes;
  auto add = [&](std::vector<std::pair<double, double>> pts) {
    Stroke s;
    s.id = first_stroke_id + static_cast<int>(strokes.size());
    s.points = std::move(pts);
    strokes.push_back(std::move(s));
  };
  if (kind == "box") {
    add({{cx - r, cy - r}, {cx + r, cy - r}, {cx + r, cy + r}, {cx - r, cy + r}, {cx - r, cy - r}});
  } else if (kind == "circle") {
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i <= 16; ++i) {
      const double a = 2.0 * 3.14159265358979323846 * i / 16.0;
      pts.emplace_back(cx + r * std::cos(a), cy + r * std::sin(a));
    }
    add(std::move(pts));
  } else if (kind == "cross") {
    add({{cx - r, cy - r}, {cx + r, cy + r}});
    add({{cx - r, cy + r}, {cx + r, cy - r}});
  } else if (kind == "zigzag") {
    add({{cx - r, cy + r},
         {cx - r / 2, cy - r},
         {cx, cy + r},
         {cx + r / 2, cy - r},
         {cx + r, cy + r}});
  } else {
    throw std::invalid_argument("generate_synthetic: unknown glyph category '" + kind + "'");
  }
  return strokes;
}

}  // namespace

DatasetSplit generate_synthetic(const SynthConfig& config, std::uint64_t seed, SplitRole role) {
  if (config.lexicon.empty()) {
    throw std::invalid_argument("generate_synthetic: glyph lexicon is empty");
  }
  if (config.min_glyphs < 1 || config.max_glyphs < config.min_glyphs) {
    throw std::invalid_argument("generate_synthetic: invalid glyph count range");
  }
  if (config.max_glyphs > static_cast<int>(config.lexicon.size())) {
    throw std::invalid_argument("generate_synthetic: lexicon smaller than max_glyphs");
  }
  // 2 x 2 placement cells; each glyph occupies one cell so they never overlap.
  const Index cell = config.canvas / 2;
  if (config.max_glyphs > 4 || cell < 8) {
    throw std::invalid_argument("generate_synthetic: canvas too small to place requested glyphs");
  }

  DatasetSplit split;
  split.role = role;
  for (int item_i = 0; item_i < config.n_items; ++item_i) {
    Rng rng(splitmix64(seed ^ (0x53594eULL + static_cast<std::uint64_t>(role) * 7919ULL)) +
            static_cast<std::uint64_t>(item_i) * 0x9e3779b9ULL);

    const int n_glyphs =
        config.min_glyphs +
        static_cast<int>(rng.below(static_cast<std::uint64_t>(config.max_glyphs - config.min_glyphs + 1)));
    std::vector<std::string> cats = config.lexicon;
    rng.shuffle(cats.begin(), cats.end());
    cats.resize(static_cast<std::size_t>(n_glyphs));
    std::vector<int> cells = {0, 1, 2, 3};
    rng.shuffle(cells.begin(), cells.end());

    DatasetItem item;
    char id_buf[32];
    std::snprintf(id_buf, sizeof(id_buf), "%s_%04d", split_role_name(role).c_str(), item_i);
    item.id = id_buf;

    std::vector<std::string> vocab = config.lexicon;
    std::sort(vocab.begin(), vocab.end());
    SegmentationMask mask;
    mask.height = config.canvas;
    mask.width = config.canvas;
    mask.labels = MatInt::Zero(config.canvas, config.canvas);

    std::vector<Stroke> all_strokes;
    std::string caption;
    int stroke_id = 0;
    for (int g = 0; g < n_glyphs; ++g) {
      const auto& cat = cats[static_cast<std::size_t>(g)];
      const int label =
          static_cast<int>(std::find(vocab.begin(), vocab.end(), cat) - vocab.begin()) + 1;
      // Glyph extent stays strictly inside its cell so glyphs never overlap.
      const int cell_idx = cells[static_cast<std::size_t>(g)];
      const double jx = rng.uniform(-1.0, 1.0);
      const double jy = rng.uniform(-1.0, 1.0);
      const double cx = (cell_idx % 2) * cell + cell / 2.0 + jx;
      const double cy = (cell_idx / 2) * cell + cell / 2.0 + jy;
      const double r = cell / 2.0 - 2.5;
      auto strokes = glyph_strokes(cat, cx, cy, r, stroke_id);
      stroke_id += static_cast<int>(strokes.size());
      for (const auto& s : strokes) {
        for (const auto& [pr, pc] : stroke_pixels(s, config.canvas, config.canvas)) {
          mask.labels(pr, pc) = label;
        }
      }
      for (auto& s : strokes) all_strokes.push_back(std::move(s));
      caption += (g == 0 ? "a " : " and a ") + cats[static_cast<std::size_t>(g)];
    }

    item.bitmap = rasterize_strokes(all_strokes, config.canvas, config.canvas);
    item.strokes = all_strokes;
    item.caption.sketch_id = item.id;
    item.caption.caption = caption;
    item.caption.categories = cats;
    validate_caption(item.caption);
    item.mask = std::move(mask);
    split.items.push_back(std::move(item));
  }
  return split;
}

Dataset generate_synthetic_dataset(const SynthConfig& config, std::uint64_t seed) {
  Dataset ds;
  ds.vocab = config.lexicon;
  std::sort(ds.vocab.begin(), ds.vocab.end());
  ds.train = generate_synthetic(config, seed, SplitRole::kTrain);
  ds.val = generate_synthetic(config, seed + 1, SplitRole::kVal);
  ds.test = generate_synthetic(config, seed + 2, SplitRole::kTest);
  return ds;
}

}  // namespace sketchseg
