#pragma once

#include <cstring>
#include <fstream>

#include "btk/model.hpp"

namespace btk {

// Checkpoint byte layout (all integers little-endian):
//   magic "BTRW" | u32 version | u16 model-name length | name bytes |
//   u64 train step | u8 flags (bit0 = backbone-only) | u32 tensor count |
//   per tensor: u16 name length | name bytes | u8 dtype (0=f32, 1=f64) |
//               u8 rank | u32 extents[rank] | raw little-endian data.
inline constexpr char kCheckpointMagic[4] = {'B', 'T', 'R', 'W'};
inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr uint8_t kFlagBackboneOnly = 0x01;

struct CheckpointError : Error {
    explicit CheckpointError(const std::string& m) : Error(m) {}
};
struct CheckpointMagicError : CheckpointError {
    explicit CheckpointMagicError(const std::string& m) : CheckpointError(m) {}
};
struct CheckpointVersionError : CheckpointError {
    explicit CheckpointVersionError(const std::string& m) : CheckpointError(m) {}
};
struct CheckpointTruncatedError : CheckpointError {
    explicit CheckpointTruncatedError(const std::string& m) : CheckpointError(m) {}
};
struct CheckpointParamError : CheckpointError {
    explicit CheckpointParamError(const std::string& m) : CheckpointError(m) {}
};

template <class T>
struct dtype_code;
template <>
struct dtype_code<float> {
    static constexpr uint8_t value = 0;
};
template <>
struct dtype_code<double> {
    static constexpr uint8_t value = 1;
};

namespace detail {

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}
template <class U>
void write_le(std::ostream& os, U v) {
    unsigned char buf[sizeof(U)];
    for (size_t i = 0; i < sizeof(U); ++i) buf[i] = (unsigned char)((uint64_t(v) >> (8 * i)) & 0xff);
    write_bytes(os, buf, sizeof(U));
}

inline void read_bytes(std::istream& is, void* p, size_t n, const char* what) {
    is.read(reinterpret_cast<char*>(p), std::streamsize(n));
    if (size_t(is.gcount()) != n)
        throw CheckpointTruncatedError(format("checkpoint: truncated while reading ", what));
}
template <class U>
U read_le(std::istream& is, const char* what) {
    unsigned char buf[sizeof(U)];
    read_bytes(is, buf, sizeof(U), what);
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(U); ++i) v |= uint64_t(buf[i]) << (8 * i);
    return U(v);
}

template <class T>
void write_scalar_le(std::ostream& os, T v) {
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    if constexpr (sizeof(T) == 4) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        write_le<uint32_t>(os, bits);
    } else {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        write_le<uint64_t>(os, bits);
    }
}
template <class T>
T read_scalar_le(std::istream& is, const char* what) {
    T v;
    if constexpr (sizeof(T) == 4) {
        uint32_t bits = read_le<uint32_t>(is, what);
        std::memcpy(&v, &bits, 4);
    } else {
        uint64_t bits = read_le<uint64_t>(is, what);
        std::memcpy(&v, &bits, 8);
    }
    return v;
}

}  // namespace detail

template <class T>
void save_tensors(const std::string& path, const std::string& model_name, uint64_t step,
                  uint8_t flags, const ParamList<T>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    check<IoError>(os.good(), "checkpoint: cannot open '", path, "' for writing");
    detail::write_bytes(os, kCheckpointMagic, 4);
    detail::write_le<uint32_t>(os, kCheckpointVersion);
    check<ValueError>(model_name.size() <= 0xffff, "checkpoint: model name too long");
    detail::write_le<uint16_t>(os, uint16_t(model_name.size()));
    detail::write_bytes(os, model_name.data(), model_name.size());
    detail::write_le<uint64_t>(os, step);
    detail::write_le<uint8_t>(os, flags);
    detail::write_le<uint32_t>(os, uint32_t(tensors.items.size()));
    for (const auto& [name, t] : tensors.items) {
        detail::write_le<uint16_t>(os, uint16_t(name.size()));
        detail::write_bytes(os, name.data(), name.size());
        detail::write_le<uint8_t>(os, dtype_code<T>::value);
        detail::write_le<uint8_t>(os, uint8_t(t.rank()));
        for (int64_t i = 0; i < t.rank(); ++i) detail::write_le<uint32_t>(os, uint32_t(t.dim(i)));
        for (T v : t.value()) detail::write_scalar_le<T>(os, v);
    }
    os.flush();
    check<IoError>(os.good(), "checkpoint: write to '", path, "' failed");
}

template <class T>
struct CheckpointFile {
    std::string model_name;
    uint64_t step = 0;
    uint8_t flags = 0;
    std::vector<std::pair<std::string, Tensor<T>>> tensors;
};

template <class T>
CheckpointFile<T> read_checkpoint_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check<IoError>(is.good(), "checkpoint: cannot open '", path, "'");
    char magic[4];
    detail::read_bytes(is, magic, 4, "magic");
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw CheckpointMagicError(format("checkpoint '", path, "': bad magic"));
    uint32_t version = detail::read_le<uint32_t>(is, "version");
    if (version != kCheckpointVersion)
        throw CheckpointVersionError(format("checkpoint '", path, "': version ", version,
                                            " unsupported (expected ", kCheckpointVersion, ")"));
    CheckpointFile<T> file;
    uint16_t name_len = detail::read_le<uint16_t>(is, "model name length");
    file.model_name.resize(name_len);
    if (name_len) detail::read_bytes(is, file.model_name.data(), name_len, "model name");
    file.step = detail::read_le<uint64_t>(is, "train step");
    file.flags = detail::read_le<uint8_t>(is, "flags");
    uint32_t count = detail::read_le<uint32_t>(is, "tensor count");
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t tn = detail::read_le<uint16_t>(is, "tensor name length");
        std::string name(tn, '\0');
        if (tn) detail::read_bytes(is, name.data(), tn, "tensor name");
        uint8_t dtype = detail::read_le<uint8_t>(is, "dtype");
        if (dtype != dtype_code<T>::value)
            throw CheckpointParamError(format("checkpoint '", path, "': tensor '", name,
                                              "' has dtype code ", int(dtype), ", expected ",
                                              int(dtype_code<T>::value)));
        uint8_t rank = detail::read_le<uint8_t>(is, "rank");
        Shape shape(rank);
        for (uint8_t r = 0; r < rank; ++r)
            shape[r] = detail::read_le<uint32_t>(is, "extent");
        std::vector<T> data(size_t(shape_numel(shape)));
        for (auto& v : data) v = detail::read_scalar_le<T>(is, "tensor data");
        file.tensors.push_back({name, Tensor<T>::from(shape, std::move(data))});
    }
    return file;
}

namespace detail {

// Copies file tensors into the model's parameter/buffer lists by name.
// Every file tensor must exist in the destination with a matching shape.
template <class T>
void fill_from_file(ParamList<T>& params, ParamList<T>& bufs, const CheckpointFile<T>& file,
                    const std::string& path) {
    for (const auto& [name, t] : file.tensors) {
        Tensor<T>* dst = params.find(name);
        if (!dst) dst = bufs.find(name);
        if (!dst)
            throw CheckpointParamError(format("checkpoint '", path, "': unknown parameter '",
                                              name, "'"));
        check<ShapeError>(dst->shape() == t.shape(), "checkpoint '", path, "': parameter '", name,
                          "' has shape ", shape_str(t.shape()), ", model expects ",
                          shape_str(dst->shape()));
        dst->value() = t.value();
    }
}

}  // namespace detail

template <class T>
void save_checkpoint(const PoseModel<T>& model, const std::string& path) {
    ParamList<T> all = model.parameters();
    ParamList<T> bufs = model.buffers();
    for (auto& [n, t] : bufs.items) all.add(n, t);
    save_tensors(path, model.spec.to_string(), uint64_t(model.train_step), 0, all);
}

template <class T>
PoseModel<T> load_checkpoint(const std::string& path) {
    CheckpointFile<T> file = read_checkpoint_file<T>(path);
    if (file.flags & kFlagBackboneOnly)
        throw CheckpointParamError(format("checkpoint '", path,
                                          "': backbone-only checkpoint cannot be loaded as a "
                                          "full model; use it as pretrained init"));
    PoseModel<T> model(parse_name(file.model_name), 0);
    ParamList<T> params = model.parameters();
    ParamList<T> bufs = model.buffers();
    // a full checkpoint must cover every parameter exactly once
    check<CheckpointParamError>(file.tensors.size() == params.items.size() + bufs.items.size(),
                                "checkpoint '", path, "': tensor count ", file.tensors.size(),
                                " != model tensor count ",
                                params.items.size() + bufs.items.size());
    detail::fill_from_file(params, bufs, file, path);
    model.train_step = int64_t(file.step);
    return model;
}

// Partial init from a backbone-only (pretraining) checkpoint: every stored
// tensor must match a model tensor by name and shape; the rest keep their
// random initialization.
template <class T>
void load_pretrained_init(PoseModel<T>& model, const std::string& path) {
    CheckpointFile<T> file = read_checkpoint_file<T>(path);
    ParamList<T> params = model.parameters();
    ParamList<T> bufs = model.buffers();
    detail::fill_from_file(params, bufs, file, path);
}

}  // namespace btk
