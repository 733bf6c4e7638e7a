#include "iod/coco.h"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "iod/error.h"

namespace iod {

const CocoCategory* CocoDataset::category(int id) const {
  for (const auto& c : categories) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

const CocoImage* CocoDataset::image(ImageId id) const {
  for (const auto& im : images) {
    if (im.id == id) return &im;
  }
  return nullptr;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  Require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

CocoDataset parse_coco(const std::string& text) {
  CocoDataset out;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("COCO file: ") + e.what());
  }
  try {
    if (doc.contains("info") && doc["info"].is_object()) out.info = doc["info"];
    for (const auto& im : doc.at("images")) {
      CocoImage image;
      image.id = im.at("id").get<ImageId>();
      image.file_name = im.value("file_name", std::string());
      image.width = im.value("width", 0.0);
      image.height = im.value("height", 0.0);
      out.images.push_back(std::move(image));
    }
    for (const auto& cat : doc.at("categories")) {
      out.categories.push_back({cat.at("id").get<int>(), cat.value("name", std::string())});
    }
    for (const auto& a : doc.at("annotations")) {
      const auto id = a.value("id", std::int64_t{0});
      if (a.value("iscrowd", 0) != 0) {
        throw Error(ErrorCode::kParse,
                    "COCO file: annotation " + std::to_string(id) +
                        " is a crowd region; crowd annotations are not supported");
      }
      const auto& bbox = a.at("bbox");
      Require(bbox.is_array() && bbox.size() == 4, ErrorCode::kParse,
              "COCO file: annotation " + std::to_string(id) +
                  " bbox must be [x, y, w, h]");
      try {
        Annotation ann{a.at("image_id").get<ImageId>(),
                       BBox(bbox[0].get<double>(), bbox[1].get<double>(),
                            bbox[2].get<double>(), bbox[3].get<double>()),
                       a.at("category_id").get<int>(),
                       a.value("is_pseudo", false),
                       std::nullopt,
                       id};
        if (a.contains("score")) ann.score = a["score"].get<double>();
        out.annotations.push_back(std::move(ann));
      } catch (const Error& e) {
        throw Error(ErrorCode::kParse,
                    "COCO file: annotation " + std::to_string(id) + ": " + e.what());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("COCO file: ") + e.what());
  }
  return out;
}

CocoDataset load_coco(const std::string& path) {
  try {
    return parse_coco(read_file(path));
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

nlohmann::json to_json(const CocoDataset& dataset) {
  nlohmann::json doc;
  doc["info"] = dataset.info;
  doc["images"] = nlohmann::json::array();
  for (const auto& im : dataset.images) {
    doc["images"].push_back({{"id", im.id},
                             {"file_name", im.file_name},
                             {"width", im.width},
                             {"height", im.height}});
  }
  doc["categories"] = nlohmann::json::array();
  for (const auto& c : dataset.categories) {
    doc["categories"].push_back({{"id", c.id}, {"name", c.name}});
  }
  doc["annotations"] = nlohmann::json::array();
  for (const auto& a : dataset.annotations) {
    nlohmann::json j{{"id", a.id},
                     {"image_id", a.image_id},
                     {"category_id", a.class_id},
                     {"bbox", {a.bbox.x(), a.bbox.y(), a.bbox.w(), a.bbox.h()}},
                     {"area", area(a.bbox)},
                     {"iscrowd", 0},
                     {"is_pseudo", a.is_pseudo}};
    if (a.score) j["score"] = *a.score;
    doc["annotations"].push_back(std::move(j));
  }
  return doc;
}

void save_coco(const CocoDataset& dataset, const std::string& path) {
  std::ofstream out(path);
  Require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path);
  out << to_json(dataset).dump(1) << '\n';
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::vector<ImageDetection> parse_detection_stream(std::istream& in) {
  std::vector<ImageDetection> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    for (char& ch : line) {
      if (ch == ',' || ch == '\t' || ch == '\r') ch = ' ';
    }
    const auto first = line.find_first_not_of(' ');
    if (first == std::string::npos || line[first] == '#') continue;

    std::istringstream fields(line);
    ImageId image_id = 0;
    double x = 0, y = 0, w = 0, h = 0, score = 0;
    int class_id = 0;
    std::string extra;
    if (!(fields >> image_id >> x >> y >> w >> h >> score >> class_id) ||
        (fields >> extra)) {
      throw Error(ErrorCode::kParse,
                  "detection stream line " + std::to_string(line_no) +
                      ": expected 'image_id x y w h score class_id'");
    }
    if (!(score >= 0.0 && score <= 1.0) || class_id < 0) {
      throw Error(ErrorCode::kParse, "detection stream line " +
                                         std::to_string(line_no) +
                                         ": score must lie in [0, 1] and class_id >= 0");
    }
    try {
      out.push_back({image_id, BBox(x, y, w, h), score, class_id});
    } catch (const Error& e) {
      throw Error(ErrorCode::kParse, "detection stream line " +
                                         std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<ImageDetection> load_detections(const std::string& path) {
  std::ifstream in(path);
  Require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path);
  try {
    return parse_detection_stream(in);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

void write_detection_stream(std::ostream& out,
                            const std::vector<ImageDetection>& detections) {
  for (const auto& d : detections) {
    out << d.image_id << ' ' << format_double(d.bbox.x()) << ' '
        << format_double(d.bbox.y()) << ' ' << format_double(d.bbox.w()) << ' '
        << format_double(d.bbox.h()) << ' ' << format_double(d.score) << ' '
        << d.class_id << '\n';
  }
}

}  // namespace iod
