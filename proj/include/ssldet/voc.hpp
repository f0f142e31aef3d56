#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "ssldet/dataset.hpp"

namespace ssldet {

// The five most represented VOC classes (the TINY regime). VOC spells
// it "aeroplane".
inline const std::vector<std::string>& tiny_voc_classes() {
  static const std::vector<std::string> c = {"aeroplane", "bird", "cat", "dog",
                                             "person"};
  return c;
}

// Scan a VOCdevkit-style directory (Annotations/*.xml, JPEGImages/) into a
// manifest. Multi-object images are kept with their object_count so that
// filter_single_object can drop them.
inline DatasetManifest ingest_voc_directory(const std::string& root,
                                            Source source_tag) {
  namespace fs = std::filesystem;
  namespace pt = boost::property_tree;
  const fs::path ann_dir = fs::path(root) / "Annotations";
  const fs::path img_dir = fs::path(root) / "JPEGImages";
  if (!fs::is_directory(ann_dir))
    throw MissingArtifactError("voc ingest: no Annotations/ under " + root);

  std::vector<fs::path> xmls;
  for (const auto& e : fs::directory_iterator(ann_dir))
    if (e.path().extension() == ".xml") xmls.push_back(e.path());
  std::sort(xmls.begin(), xmls.end());

  DatasetManifest m;
  m.split = source_tag == Source::voc2007 ? Split::test : Split::train;
  for (const auto& xml : xmls) {
    std::ifstream in(xml);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();

    pt::ptree tree;
    std::istringstream is(bytes);
    try {
      pt::read_xml(is, tree);
    } catch (const pt::xml_parser_error& e) {
      throw ParseError("voc ingest: " + xml.string() + ": " + e.what());
    }
    const int width = tree.get<int>("annotation.size.width", 0);
    const int height = tree.get<int>("annotation.size.height", 0);
    if (width <= 0 || height <= 0)
      throw InvalidAnnotationError("voc ingest: missing size in " +
                                   xml.string());
    const std::string filename =
        tree.get<std::string>("annotation.filename", xml.stem().string() + ".jpg");

    auto objects = parse_voc_annotation(bytes);
    ImageRecord r;
    r.image_ref = (img_dir / filename).string();
    r.width = width;
    r.height = height;
    r.source = source_tag;
    r.object_count = static_cast<int>(objects.size());
    if (objects.size() == 1) {
      r.category = objects.front().first;
      r.box = normalize_box(objects.front().second, width, height);
    }
    m.records.push_back(std::move(r));
  }
  m.class_names = collect_class_names(m.records);
  return m;
}

// Any directory of decodable images as an unlabeled SSL pool.
inline DatasetManifest scan_image_directory(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root))
    throw MissingArtifactError("image pool: not a directory: " + root);
  std::vector<fs::path> paths;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    const auto ext = e.path().extension().string();
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp")
      paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty())
    throw MissingArtifactError("image pool: no decodable images under " + root);

  DatasetManifest m;
  m.split = Split::pool;
  for (const auto& p : paths) {
    ImageRecord r;
    r.image_ref = p.string();
    r.source = Source::unlabeled_pool;
    r.object_count = 0;
    m.records.push_back(std::move(r));
  }
  return m;
}

}  // namespace ssldet
