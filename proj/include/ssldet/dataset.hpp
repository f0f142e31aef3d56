#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <nlohmann/json.hpp>

#include "ssldet/box.hpp"
#include "ssldet/common.hpp"

namespace ssldet {

struct PixelBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;
  bool operator==(const PixelBox&) const = default;
};

enum class Source { voc2012, voc2007, unlabeled_pool, synthetic };

inline std::string to_string(Source s) {
  switch (s) {
    case Source::voc2012: return "voc2012";
    case Source::voc2007: return "voc2007";
    case Source::unlabeled_pool: return "unlabeled-pool";
    case Source::synthetic: return "synthetic";
  }
  throw ContractError("unknown source tag");
}

inline Source source_from_string(const std::string& s) {
  if (s == "voc2012") return Source::voc2012;
  if (s == "voc2007") return Source::voc2007;
  if (s == "unlabeled-pool") return Source::unlabeled_pool;
  if (s == "synthetic") return Source::synthetic;
  throw ParseError("unknown source tag: " + s);
}

enum class Split { train, val, test, pool };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::pool: return "pool";
  }
  throw ContractError("unknown split tag");
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "pool") return Split::pool;
  throw ParseError("unknown split tag: " + s);
}

// One image. Labeled records carry both category and box; unlabeled
// records carry neither. object_count is the annotated-object count of
// the source image (filter_single_object keys off it).
struct ImageRecord {
  std::string image_ref;  // file path or synth:// locator
  int width = 0;
  int height = 0;
  std::optional<std::string> category;
  std::optional<BoundingBox> box;
  Source source = Source::synthetic;
  int object_count = 0;

  bool labeled() const { return category.has_value() && box.has_value(); }
};

struct DatasetManifest {
  std::vector<ImageRecord> records;
  std::vector<std::string> class_names;
  Split split = Split::train;
  std::int64_t seed = 0;

  int class_index(const std::string& name) const {
    auto it = std::find(class_names.begin(), class_names.end(), name);
    if (it == class_names.end())
      throw ContractError("class not in manifest: " + name);
    return static_cast<int>(it - class_names.begin());
  }
};

struct SubsetSpec {
  std::vector<std::string> classes;
  int n_per_class = 0;
  std::int64_t seed = 0;
};

// ---------------------------------------------------------------------------
// VOC annotation XML

inline std::vector<std::pair<std::string, PixelBox>> parse_voc_annotation(
    const std::string& xml_bytes) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(xml_bytes);
  try {
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& e) {
    throw ParseError(std::string("voc annotation: malformed xml: ") + e.what());
  }
  auto ann = tree.get_child_optional("annotation");
  if (!ann) throw ParseError("voc annotation: missing <annotation> element");

  std::vector<std::pair<std::string, PixelBox>> out;
  for (const auto& [key, node] : *ann) {
    if (key != "object") continue;
    auto name = node.get_optional<std::string>("name");
    if (!name) throw ParseError("voc annotation: object missing <name>");
    auto bnd = node.get_child_optional("bndbox");
    if (!bnd) throw ParseError("voc annotation: object missing <bndbox>");
    PixelBox box;
    auto coord = [&](const char* tag) {
      auto v = bnd->get_optional<int>(tag);
      if (!v)
        throw ParseError(std::string("voc annotation: bndbox missing <") +
                         tag + ">");
      return *v;
    };
    box.x_min = coord("xmin");
    box.y_min = coord("ymin");
    box.x_max = coord("xmax");
    box.y_max = coord("ymax");
    if (box.x_min >= box.x_max || box.y_min >= box.y_max) {
      std::ostringstream msg;
      msg << "voc annotation: degenerate box for object '" << *name << "' ("
          << box.x_min << "," << box.y_min << "," << box.x_max << ","
          << box.y_max << ")";
      throw InvalidAnnotationError(msg.str());
    }
    out.emplace_back(*name, box);
  }
  return out;
}

inline BoundingBox normalize_box(const PixelBox& p, int width, int height) {
  if (width <= 0 || height <= 0)
    throw InvalidAnnotationError("normalize_box: non-positive image size");
  if (p.x_min < 0 || p.y_min < 0 || p.x_max > width || p.y_max > height ||
      p.x_min >= p.x_max || p.y_min >= p.y_max) {
    std::ostringstream msg;
    msg << "normalize_box: box (" << p.x_min << "," << p.y_min << ","
        << p.x_max << "," << p.y_max << ") out of range for " << width << "x"
        << height;
    throw InvalidAnnotationError(msg.str());
  }
  return BoundingBox{static_cast<double>(p.x_min) / width,
                     static_cast<double>(p.y_min) / height,
                     static_cast<double>(p.x_max) / width,
                     static_cast<double>(p.y_max) / height};
}

// ---------------------------------------------------------------------------
// Manifest operations

inline DatasetManifest filter_single_object(const DatasetManifest& m) {
  DatasetManifest out;
  out.class_names = m.class_names;
  out.split = m.split;
  out.seed = m.seed;
  for (const auto& r : m.records)
    if (r.object_count == 1) out.records.push_back(r);
  return out;
}

inline DatasetManifest build_subset(const DatasetManifest& m,
                                    const SubsetSpec& spec) {
  if (spec.n_per_class <= 0)
    throw ContractError("build_subset: n_per_class must be positive");

  // Indices per requested class, in manifest order.
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (const auto& c : spec.classes) by_class[c];
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    if (!r.labeled()) continue;
    auto it = by_class.find(*r.category);
    if (it != by_class.end()) it->second.push_back(i);
  }

  std::vector<std::size_t> chosen;
  for (const auto& c : spec.classes) {
    auto& idx = by_class[c];
    if (static_cast<int>(idx.size()) < spec.n_per_class) {
      std::ostringstream msg;
      msg << "build_subset: class '" << c << "' has " << idx.size()
          << " records, need " << spec.n_per_class;
      throw CapacityError(msg.str());
    }
    auto rng = make_rng(derive_seed(static_cast<std::uint64_t>(spec.seed),
                                    hash_string(c)));
    std::shuffle(idx.begin(), idx.end(), rng);
    chosen.insert(chosen.end(), idx.begin(), idx.begin() + spec.n_per_class);
  }
  std::sort(chosen.begin(), chosen.end());  // keep original manifest order

  DatasetManifest out;
  out.class_names = m.class_names;
  out.split = m.split;
  out.seed = spec.seed;
  for (auto i : chosen) out.records.push_back(m.records[i]);
  return out;
}

inline std::pair<DatasetManifest, DatasetManifest> split_train_val(
    const DatasetManifest& m, double train_fraction, std::int64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ContractError("split_train_val: fraction must be in (0,1)");

  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    if (!m.records[i].labeled())
      throw ContractError("split_train_val: unlabeled record in manifest");
    by_class[*m.records[i].category].push_back(i);
  }

  std::vector<std::size_t> train_idx, val_idx;
  for (auto& [cls, idx] : by_class) {
    if (idx.size() < 2)
      throw ContractError("split_train_val: class '" + cls +
                          "' has fewer than 2 records");
    auto rng = make_rng(
        derive_seed(static_cast<std::uint64_t>(seed), hash_string(cls), 1));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(
        std::lround(train_fraction * static_cast<double>(idx.size())));
    train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + n_train);
    val_idx.insert(val_idx.end(), idx.begin() + n_train, idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());

  auto pick = [&](const std::vector<std::size_t>& idx, Split tag) {
    DatasetManifest out;
    out.class_names = m.class_names;
    out.split = tag;
    out.seed = seed;
    for (auto i : idx) out.records.push_back(m.records[i]);
    return out;
  };
  return {pick(train_idx, Split::train), pick(val_idx, Split::val)};
}

// ---------------------------------------------------------------------------
// JSON serialization

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["class_names"] = m.class_names;
  j["seed"] = m.seed;
  j["split"] = to_string(m.split);
  j["records"] = nlohmann::json::array();
  for (const auto& r : m.records) {
    nlohmann::json rec;
    rec["image_ref"] = r.image_ref;
    rec["width"] = r.width;
    rec["height"] = r.height;
    rec["source"] = to_string(r.source);
    rec["object_count"] = r.object_count;
    if (r.category) rec["category"] = *r.category;
    if (r.box)
      rec["box"] = {r.box->x_min, r.box->y_min, r.box->x_max, r.box->y_max};
    j["records"].push_back(std::move(rec));
  }
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.class_names = j.at("class_names").get<std::vector<std::string>>();
  m.seed = j.at("seed").get<std::int64_t>();
  m.split = split_from_string(j.at("split").get<std::string>());
  for (const auto& rec : j.at("records")) {
    ImageRecord r;
    r.image_ref = rec.at("image_ref").get<std::string>();
    r.width = rec.at("width").get<int>();
    r.height = rec.at("height").get<int>();
    r.source = source_from_string(rec.at("source").get<std::string>());
    r.object_count = rec.at("object_count").get<int>();
    if (rec.contains("category")) r.category = rec["category"].get<std::string>();
    if (rec.contains("box")) {
      auto b = rec["box"].get<std::vector<double>>();
      if (b.size() != 4) throw ParseError("manifest: box must have 4 entries");
      r.box = BoundingBox{b[0], b[1], b[2], b[3]};
    }
    m.records.push_back(std::move(r));
  }
  for (const auto& r : m.records)
    if (r.box && !r.box->valid())
      throw InvalidAnnotationError("manifest: invalid box for " + r.image_ref);
  return m;
}

// Lexicographic class ordering, fixed once per manifest.
inline std::vector<std::string> collect_class_names(
    const std::vector<ImageRecord>& records) {
  std::set<std::string> s;
  for (const auto& r : records)
    if (r.category) s.insert(*r.category);
  return {s.begin(), s.end()};
}

}  // namespace ssldet
