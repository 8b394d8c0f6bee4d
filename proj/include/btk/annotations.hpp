#pragma once

#include "btk/synth.hpp"

namespace btk {

// Annotation file schema (a strict subset of COCO keypoints):
//   {"images": [{"id", "width", "height", "file_name"}],
//    "annotations": [{"image_id", "keypoints": [x,y,v]*17, "area"}]}
struct AnnotationSchemaError : Error {
    explicit AnnotationSchemaError(const std::string& m) : Error(m) {}
};
struct AnnotationLengthError : Error {
    explicit AnnotationLengthError(const std::string& m) : Error(m) {}
};

struct ImageInfo {
    int64_t id = 0;
    int64_t width = 0, height = 0;
    std::string file_name;
};

struct AnnotationRecord {
    int64_t image_id = 0;
    std::array<Keypoint, kNumKeypoints> keypoints;
    double area = 1.0;
};

struct AnnotationSet {
    std::vector<ImageInfo> images;
    std::vector<AnnotationRecord> annotations;
};

void write_annotations(const AnnotationSet& set, const std::string& path);

// Throws ParseError on malformed JSON, AnnotationSchemaError on missing
// fields, AnnotationLengthError when a keypoints array is not 51 long.
AnnotationSet read_annotations(const std::string& path);

// Predictions JSON (COCO-results subset): [{"image_id", "keypoints":
// [x,y,score]*17, "score"}]
struct PredictionRecord {
    int64_t image_id = 0;
    std::array<std::array<float, 3>, kNumKeypoints> keypoints{};  // x, y, per-joint score
    double score = 0.0;
};

void write_predictions(const std::vector<PredictionRecord>& preds, const std::string& path);
std::vector<PredictionRecord> read_predictions(const std::string& path);

}  // namespace btk
