#ifndef IOD_COCO_H_
#define IOD_COCO_H_

#include <iosfwd>
#include <string>
#include <vector>

#include "iod/records.h"
#include "json.hpp"

namespace iod {

struct CocoImage {
  ImageId id = 0;
  std::string file_name;
  double width = 0.0;
  double height = 0.0;
};

struct CocoCategory {
  int id = 0;
  std::string name;
};

// The subset of a COCO detection file this library reads and writes. Box
// convention is absolute top-left [x, y, w, h]. Crowd annotations and
// degenerate boxes are rejected while parsing.
struct CocoDataset {
  nlohmann::json info = nlohmann::json::object();
  std::vector<CocoImage> images;
  std::vector<Annotation> annotations;
  std::vector<CocoCategory> categories;

  const CocoCategory* category(int id) const;
  const CocoImage* image(ImageId id) const;
};

CocoDataset parse_coco(const std::string& text);
CocoDataset load_coco(const std::string& path);
nlohmann::json to_json(const CocoDataset& dataset);
void save_coco(const CocoDataset& dataset, const std::string& path);

// Detection stream: one record per line, "image_id x y w h score class_id",
// separated by whitespace or commas. Blank lines and '#' comments are skipped.
std::vector<ImageDetection> parse_detection_stream(std::istream& in);
std::vector<ImageDetection> load_detections(const std::string& path);
void write_detection_stream(std::ostream& out,
                            const std::vector<ImageDetection>& detections);

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

std::string read_file(const std::string& path);

}  // namespace iod

#endif  // IOD_COCO_H_
