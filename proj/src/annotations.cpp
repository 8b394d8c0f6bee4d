#include "btk/annotations.hpp"

#include <fstream>

#include <json.hpp>

namespace btk {

using nlohmann::json;

namespace {

const json& require(const json& obj, const char* field, const char* where) {
    auto it = obj.find(field);
    if (it == obj.end())
        throw AnnotationSchemaError(format("annotations: missing field '", field, "' in ", where));
    return *it;
}

json load_json(const std::string& path) {
    std::ifstream is(path);
    check<IoError>(is.good(), "annotations: cannot open '", path, "'");
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        throw ParseError(format("annotations: malformed JSON in '", path, "': ", e.what()));
    }
}

}  // namespace

void write_annotations(const AnnotationSet& set, const std::string& path) {
    json root;
    root["images"] = json::array();
    for (const auto& im : set.images)
        root["images"].push_back({{"id", im.id},
                                  {"width", im.width},
                                  {"height", im.height},
                                  {"file_name", im.file_name}});
    root["annotations"] = json::array();
    for (const auto& ann : set.annotations) {
        json kps = json::array();
        for (const auto& kp : ann.keypoints) {
            kps.push_back(double(kp.x));
            kps.push_back(double(kp.y));
            kps.push_back(kp.v);
        }
        root["annotations"].push_back(
            {{"image_id", ann.image_id}, {"keypoints", std::move(kps)}, {"area", ann.area}});
    }
    std::ofstream os(path, std::ios::trunc);
    check<IoError>(os.good(), "annotations: cannot open '", path, "' for writing");
    os << root.dump(2) << "\n";
    os.flush();
    check<IoError>(os.good(), "annotations: write to '", path, "' failed");
}

AnnotationSet read_annotations(const std::string& path) {
    json root = load_json(path);
    AnnotationSet set;
    for (const auto& im : require(root, "images", "root")) {
        ImageInfo info;
        info.id = require(im, "id", "images[]").get<int64_t>();
        info.width = require(im, "width", "images[]").get<int64_t>();
        info.height = require(im, "height", "images[]").get<int64_t>();
        info.file_name = require(im, "file_name", "images[]").get<std::string>();
        set.images.push_back(std::move(info));
    }
    for (const auto& a : require(root, "annotations", "root")) {
        AnnotationRecord rec;
        rec.image_id = require(a, "image_id", "annotations[]").get<int64_t>();
        const json& kps = require(a, "keypoints", "annotations[]");
        if (kps.size() != size_t(kNumKeypoints * 3))
            throw AnnotationLengthError(format("annotations: keypoints array has ", kps.size(),
                                               " numbers, expected ", kNumKeypoints * 3));
        for (int k = 0; k < kNumKeypoints; ++k) {
            rec.keypoints[size_t(k)].x = kps[size_t(3 * k)].get<float>();
            rec.keypoints[size_t(k)].y = kps[size_t(3 * k + 1)].get<float>();
            rec.keypoints[size_t(k)].v = kps[size_t(3 * k + 2)].get<int>();
        }
        rec.area = require(a, "area", "annotations[]").get<double>();
        set.annotations.push_back(rec);
    }
    return set;
}

void write_predictions(const std::vector<PredictionRecord>& preds, const std::string& path) {
    json root = json::array();
    for (const auto& p : preds) {
        json kps = json::array();
        for (const auto& kp : p.keypoints) {
            kps.push_back(double(kp[0]));
            kps.push_back(double(kp[1]));
            kps.push_back(double(kp[2]));
        }
        root.push_back(
            {{"image_id", p.image_id}, {"keypoints", std::move(kps)}, {"score", p.score}});
    }
    std::ofstream os(path, std::ios::trunc);
    check<IoError>(os.good(), "predictions: cannot open '", path, "' for writing");
    os << root.dump(2) << "\n";
    os.flush();
    check<IoError>(os.good(), "predictions: write to '", path, "' failed");
}

std::vector<PredictionRecord> read_predictions(const std::string& path) {
    json root = load_json(path);
    std::vector<PredictionRecord> preds;
    for (const auto& p : root) {
        PredictionRecord rec;
        rec.image_id = require(p, "image_id", "predictions[]").get<int64_t>();
        const json& kps = require(p, "keypoints", "predictions[]");
        if (kps.size() != size_t(kNumKeypoints * 3))
            throw AnnotationLengthError(format("predictions: keypoints array has ", kps.size(),
                                               " numbers, expected ", kNumKeypoints * 3));
        for (int k = 0; k < kNumKeypoints; ++k)
            for (int c = 0; c < 3; ++c)
                rec.keypoints[size_t(k)][size_t(c)] = kps[size_t(3 * k + c)].get<float>();
        rec.score = require(p, "score", "predictions[]").get<double>();
        preds.push_back(rec);
    }
    return preds;
}

}  // namespace btk
