#include "btk/image_io.hpp"

#include <fstream>

namespace btk {

void write_ppm(const Tensor<float>& image, const std::string& path) {
    check<ShapeError>(image.rank() == 3 && image.dim(0) == 3, "write_ppm: expected [3,H,W], got ",
                      shape_str(image.shape()));
    int64_t H = image.dim(1), W = image.dim(2);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    check<IoError>(os.good(), "write_ppm: cannot open '", path, "'");
    os << "P6\n" << W << " " << H << "\n255\n";
    const float* v = image.value().data();
    std::vector<unsigned char> row(size_t(W * 3));
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                float f = v[c * H * W + y * W + x];
                long b = std::lround(double(f) * 255.0);
                row[size_t(x * 3 + c)] = (unsigned char)std::min(255l, std::max(0l, b));
            }
        os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
    os.flush();
    check<IoError>(os.good(), "write_ppm: write to '", path, "' failed");
}

Tensor<float> read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check<IoError>(is.good(), "read_ppm: cannot open '", path, "'");
    std::string magic;
    is >> magic;
    check<ParseError>(magic == "P6", "read_ppm: '", path, "' is not a P6 file");
    int64_t w = 0, h = 0, maxval = 0;
    is >> w >> h >> maxval;
    check<ParseError>(w > 0 && h > 0 && maxval == 255, "read_ppm: '", path,
                      "' has unsupported header (", w, "x", h, ", maxval ", maxval, ")");
    is.get();  // single whitespace after maxval
    std::vector<unsigned char> bytes(size_t(w * h * 3));
    is.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
    check<IoError>(size_t(is.gcount()) == bytes.size(), "read_ppm: '", path, "' is truncated");
    Tensor<float> image = Tensor<float>::zeros({3, h, w});
    float* v = image.value().data();
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                v[c * h * w + y * w + x] = float(bytes[size_t((y * w + x) * 3 + c)]) / 255.0f;
    return image;
}

}  // namespace btk
