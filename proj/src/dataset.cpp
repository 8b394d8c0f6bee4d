#include "btk/dataset.hpp"

#include <filesystem>

#include "btk/annotations.hpp"
#include "btk/image_io.hpp"

namespace btk {

namespace fs = std::filesystem;

std::vector<PoseSample> synth_dataset(int64_t n, uint64_t seed, int64_t img_h, int64_t img_w) {
    std::vector<PoseSample> out;
    out.reserve(size_t(n));
    for (int64_t i = 0; i < n; ++i) {
        PoseSample s = generate_sample(seed * 1000003ull + uint64_t(i), img_h, img_w);
        s.id = i;
        out.push_back(std::move(s));
    }
    return out;
}

void write_dataset(const std::vector<PoseSample>& samples, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    check<IoError>(!ec, "write_dataset: cannot create directory '", dir, "': ", ec.message());
    AnnotationSet set;
    for (const auto& s : samples) {
        std::string name = format("img_", s.id, ".ppm");
        write_ppm(s.image, (fs::path(dir) / name).string());
        ImageInfo info;
        info.id = s.id;
        info.width = s.image.dim(2);
        info.height = s.image.dim(1);
        info.file_name = name;
        set.images.push_back(std::move(info));
        AnnotationRecord rec;
        rec.image_id = s.id;
        rec.keypoints = s.keypoints;
        rec.area = double(s.area);
        set.annotations.push_back(std::move(rec));
    }
    write_annotations(set, (fs::path(dir) / "annotations.json").string());
}

std::vector<PoseSample> load_dataset(const std::string& dir) {
    AnnotationSet set = read_annotations((fs::path(dir) / "annotations.json").string());
    std::vector<PoseSample> out;
    for (const auto& ann : set.annotations) {
        const ImageInfo* info = nullptr;
        for (const auto& im : set.images)
            if (im.id == ann.image_id) {
                info = &im;
                break;
            }
        check<ValueError>(info != nullptr, "load_dataset: annotation references image id ",
                          ann.image_id, " with no matching images[] entry");
        PoseSample s;
        s.id = ann.image_id;
        s.image = read_ppm((fs::path(dir) / info->file_name).string());
        check<ShapeError>(s.image.dim(1) == info->height && s.image.dim(2) == info->width,
                          "load_dataset: image '", info->file_name, "' is ", s.image.dim(2), "x",
                          s.image.dim(1), " but annotations say ", info->width, "x",
                          info->height);
        s.keypoints = ann.keypoints;
        s.area = float(ann.area);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace btk
