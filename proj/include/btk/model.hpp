#pragma once

#include "btk/encoder.hpp"

namespace btk {

enum class InitMode { Random, Pretrained };

// Parsed architecture description. Canonical names follow the
// C{n}A{m}(heads) grammar with optional -Dino / -N6 / -Large suffixes;
// programmatic (test-scale) specs serialize through the custom[...] form.
struct ModelSpec {
    int64_t n_conv_groups = 3;
    int64_t n_mhsa_groups = 1;
    int64_t mhsa_heads = 4;
    std::vector<int64_t> widths = {64, 96, 128, 256};
    std::vector<int64_t> blocks_per_group = {3, 4, 6, 3};
    EncoderConfig encoder;
    int64_t n_keypoints = 17;
    int64_t input_h = 256, input_w = 192;
    int64_t head_channels = 256;
    InitMode init = InitMode::Random;

    int64_t n_groups() const { return n_conv_groups + n_mhsa_groups; }
    int64_t heatmap_h() const { return input_h / 4; }
    int64_t heatmap_w() const { return input_w / 4; }
    // backbone output grid: stem /4, then the single stride-2 group
    int64_t grid_h() const { return input_h / 8; }
    int64_t grid_w() const { return input_w / 8; }

    std::vector<BlockGroupSpec> group_specs() const {
        std::vector<BlockGroupSpec> specs;
        for (int64_t g = 0; g < n_groups(); ++g) {
            BlockGroupSpec s;
            s.kind = g < n_conv_groups ? BlockKind::Conv : BlockKind::Mhsa;
            s.width = widths.at(size_t(g));
            s.n_blocks = blocks_per_group.at(size_t(g));
            s.stride = g == 1 ? 2 : 1;
            s.heads = mhsa_heads;
            specs.push_back(s);
        }
        return specs;
    }

    // Reduced configuration for gradient checks and desk-scale training.
    static ModelSpec tiny() {
        ModelSpec s;
        s.n_conv_groups = 2;
        s.n_mhsa_groups = 1;
        s.mhsa_heads = 2;
        s.widths = {4, 6, 8};
        s.blocks_per_group = {1, 1, 1};
        s.encoder = EncoderConfig{16, 32, 1, 2, 0};
        s.input_h = 32;
        s.input_w = 24;
        s.head_channels = 8;
        return s;
    }

    std::string to_string() const;
};

namespace detail {

inline bool consume(const std::string& s, size_t& pos, const std::string& token) {
    if (s.compare(pos, token.size(), token) == 0) {
        pos += token.size();
        return true;
    }
    return false;
}

inline int64_t parse_int(const std::string& s, size_t& pos, const char* what) {
    size_t start = pos;
    while (pos < s.size() && std::isdigit(uint8_t(s[pos]))) ++pos;
    check<ParseError>(pos > start, "model name: expected ", what, " at position ", start, " in '",
                      s, "'");
    return std::stoll(s.substr(start, pos - start));
}

inline std::vector<int64_t> parse_int_list(const std::string& s, char sep) {
    std::vector<int64_t> out;
    size_t pos = 0;
    while (pos <= s.size()) {
        size_t end = s.find(sep, pos);
        if (end == std::string::npos) end = s.size();
        out.push_back(std::stoll(s.substr(pos, end - pos)));
        pos = end + 1;
        if (end == s.size()) break;
    }
    return out;
}

ModelSpec parse_custom_spec(const std::string& name);

}  // namespace detail

inline const char* kNameGrammar =
    "C{2|3}A{1|2}({4|8}) with optional -Dino, -N6, -Large suffixes "
    "(conv groups + MHSA groups must total 3 or 4), or custom[k=v,...]";

inline ModelSpec parse_name(const std::string& name) {
    if (name.rfind("custom[", 0) == 0) return detail::parse_custom_spec(name);
    ModelSpec spec;
    size_t pos = 0;
    check<ParseError>(detail::consume(name, pos, "C"), "model name '", name,
                      "': expected leading 'C'; grammar: ", kNameGrammar);
    spec.n_conv_groups = detail::parse_int(name, pos, "conv group count");
    check<ParseError>(detail::consume(name, pos, "A"), "model name '", name,
                      "': expected 'A'; grammar: ", kNameGrammar);
    spec.n_mhsa_groups = detail::parse_int(name, pos, "MHSA group count");
    check<ParseError>(detail::consume(name, pos, "("), "model name '", name,
                      "': expected '(heads)'; grammar: ", kNameGrammar);
    spec.mhsa_heads = detail::parse_int(name, pos, "head count");
    check<ParseError>(detail::consume(name, pos, ")"), "model name '", name,
                      "': expected ')'; grammar: ", kNameGrammar);
    check<ParseError>(spec.n_conv_groups >= 2 && spec.n_conv_groups <= 3 &&
                          spec.n_mhsa_groups >= 1 && spec.n_mhsa_groups <= 2 &&
                          spec.n_groups() >= 3 && spec.n_groups() <= 4,
                      "model name '", name, "': group counts C", spec.n_conv_groups, "A",
                      spec.n_mhsa_groups, " out of range; grammar: ", kNameGrammar);
    check<ParseError>(spec.mhsa_heads == 4 || spec.mhsa_heads == 8, "model name '", name,
                      "': head count must be 4 or 8; grammar: ", kNameGrammar);
    bool dino = false, n6 = false, large = false;
    while (pos < name.size()) {
        if (!dino && detail::consume(name, pos, "-Dino")) {
            dino = true;
        } else if (!n6 && detail::consume(name, pos, "-N6")) {
            n6 = true;
        } else if (!large && detail::consume(name, pos, "-Large")) {
            large = true;
        } else {
            throw ParseError(format("model name '", name, "': unexpected suffix at position ",
                                    pos, "; grammar: ", kNameGrammar));
        }
    }
    if (dino) spec.init = InitMode::Pretrained;
    if (n6) spec.encoder.n_layers = 6;
    spec.widths = large ? std::vector<int64_t>{64, 128, 256, 512}
                        : std::vector<int64_t>{64, 96, 128, 256};
    spec.widths.resize(size_t(spec.n_groups()));
    spec.blocks_per_group = {3, 4, 6, 3};
    spec.blocks_per_group.resize(size_t(spec.n_groups()));
    spec.encoder.seq_len = spec.grid_h() * spec.grid_w();
    return spec;
}

inline std::string ModelSpec::to_string() const {
    // emit the canonical name when this spec matches one
    bool large = widths.size() >= 2 && widths[1] == 128 && widths[0] == 64;
    std::string name = format("C", n_conv_groups, "A", n_mhsa_groups, "(", mhsa_heads, ")");
    if (init == InitMode::Pretrained) name += "-Dino";
    if (encoder.n_layers == 6) name += "-N6";
    if (large) name += "-Large";
    try {
        ModelSpec round = parse_name(name);
        if (round.widths == widths && round.blocks_per_group == blocks_per_group &&
            round.encoder.d_model == encoder.d_model && round.encoder.d_ffn == encoder.d_ffn &&
            round.encoder.n_layers == encoder.n_layers &&
            round.encoder.n_heads == encoder.n_heads && round.input_h == input_h &&
            round.input_w == input_w && round.head_channels == head_channels &&
            round.n_keypoints == n_keypoints && round.mhsa_heads == mhsa_heads)
            return name;
    } catch (const ParseError&) {
    }
    std::string w, bl;
    for (size_t i = 0; i < widths.size(); ++i) w += (i ? "." : "") + std::to_string(widths[i]);
    for (size_t i = 0; i < blocks_per_group.size(); ++i)
        bl += (i ? "." : "") + std::to_string(blocks_per_group[i]);
    return format("custom[conv=", n_conv_groups, ",mhsa=", n_mhsa_groups, ",heads=", mhsa_heads,
                  ",widths=", w, ",blocks=", bl, ",dmodel=", encoder.d_model, ",dffn=",
                  encoder.d_ffn, ",enclayers=", encoder.n_layers, ",encheads=", encoder.n_heads,
                  ",inh=", input_h, ",inw=", input_w, ",headch=", head_channels, ",kp=",
                  n_keypoints, ",init=", init == InitMode::Pretrained ? 1 : 0, "]");
}

namespace detail {

inline ModelSpec parse_custom_spec(const std::string& name) {
    check<ParseError>(name.back() == ']', "model name '", name, "': custom form must end in ']'");
    std::string body = name.substr(7, name.size() - 8);
    ModelSpec spec;
    size_t pos = 0;
    while (pos < body.size()) {
        size_t eq = body.find('=', pos);
        check<ParseError>(eq != std::string::npos, "model name '", name, "': malformed custom field");
        size_t end = body.find(',', eq);
        if (end == std::string::npos) end = body.size();
        std::string key = body.substr(pos, eq - pos);
        std::string val = body.substr(eq + 1, end - eq - 1);
        try {
            if (key == "conv")
                spec.n_conv_groups = std::stoll(val);
            else if (key == "mhsa")
                spec.n_mhsa_groups = std::stoll(val);
            else if (key == "heads")
                spec.mhsa_heads = std::stoll(val);
            else if (key == "widths")
                spec.widths = parse_int_list(val, '.');
            else if (key == "blocks")
                spec.blocks_per_group = parse_int_list(val, '.');
            else if (key == "dmodel")
                spec.encoder.d_model = std::stoll(val);
            else if (key == "dffn")
                spec.encoder.d_ffn = std::stoll(val);
            else if (key == "enclayers")
                spec.encoder.n_layers = std::stoll(val);
            else if (key == "encheads")
                spec.encoder.n_heads = std::stoll(val);
            else if (key == "inh")
                spec.input_h = std::stoll(val);
            else if (key == "inw")
                spec.input_w = std::stoll(val);
            else if (key == "headch")
                spec.head_channels = std::stoll(val);
            else if (key == "kp")
                spec.n_keypoints = std::stoll(val);
            else if (key == "init")
                spec.init = std::stoll(val) ? InitMode::Pretrained : InitMode::Random;
            else
                throw ParseError(format("model name '", name, "': unknown custom field '", key,
                                        "'"));
        } catch (const std::invalid_argument&) {
            throw ParseError(format("model name '", name, "': bad value for '", key, "'"));
        }
        pos = end + 1;
    }
    check<ParseError>(int64_t(spec.widths.size()) == spec.n_groups(), "model name '", name,
                      "': widths count must equal group count");
    check<ParseError>(int64_t(spec.blocks_per_group.size()) == spec.n_groups(), "model name '",
                      name, "': blocks count must equal group count");
    spec.encoder.seq_len = spec.grid_h() * spec.grid_w();
    return spec;
}

}  // namespace detail

// One forward pass worth of outputs.
template <class T>
struct ForwardResult {
    Tensor<T> heatmaps;  // [N x K x H/4 x W/4]
    AttentionRecord<T> attention;
    std::vector<std::pair<std::string, Shape>> stages;  // per-stage output shapes
};

struct ForwardOptions {
    bool training = false;
    bool retain_attention = false;
};

// The full pose model: backbone -> 1x1 projection -> flatten -> encoder ->
// reshape -> deconv (x2 upsample) -> BN/ReLU -> 1x1 conv to K heatmaps.
template <class T>
struct PoseModel {
    ModelSpec spec;
    Backbone<T> backbone;
    Conv2dLayer<T> proj;
    TransformerEncoder<T> encoder;
    ConvTranspose2dLayer<T> deconv;
    BatchNorm2dLayer<T> head_bn;
    Conv2dLayer<T> head_conv;
    int64_t train_step = 0;  // persisted in checkpoints

    PoseModel() = default;
    PoseModel(const ModelSpec& spec_, uint64_t seed) : spec(spec_) {
        Rng rng(seed);
        EncoderConfig ec = spec.encoder;
        ec.seq_len = spec.grid_h() * spec.grid_w();
        spec.encoder = ec;
        backbone = Backbone<T>(spec.input_h, spec.input_w, spec.group_specs(), rng);
        proj = Conv2dLayer<T>(backbone.out_channels, ec.d_model, 1, 1, 0, true, rng);
        encoder = TransformerEncoder<T>(ec, rng);
        deconv = ConvTranspose2dLayer<T>(ec.d_model, spec.head_channels, 4, 2, 1, rng);
        head_bn = BatchNorm2dLayer<T>(spec.head_channels);
        head_conv = Conv2dLayer<T>(spec.head_channels, spec.n_keypoints, 1, 1, 0, true, rng);
    }

    ForwardResult<T> forward(const Tensor<T>& images, const ForwardOptions& opts = {}) {
        check<ShapeError>(images.rank() == 4 && images.dim(1) == 3 &&
                              images.dim(2) == spec.input_h && images.dim(3) == spec.input_w,
                          "forward: expected Nx3x", spec.input_h, "x", spec.input_w, ", got ",
                          shape_str(images.shape()));
        ForwardResult<T> result;
        AttentionRecord<T>* rec = opts.retain_attention ? &result.attention : nullptr;
        result.attention.grid_h = spec.grid_h();
        result.attention.grid_w = spec.grid_w();
        auto stage = [&](const char* name, const Tensor<T>& t) {
            result.stages.push_back({name, Shape(t.shape().begin() + 1, t.shape().end())});
        };
        int64_t N = images.dim(0);
        int64_t H = spec.grid_h(), W = spec.grid_w(), L = H * W, d = spec.encoder.d_model;

        stage("input", images);
        Tensor<T> x = backbone.stem_forward(images, opts.training);
        stage("stem", x);
        for (size_t g = 0; g < backbone.groups.size(); ++g) {
            x = backbone.groups[g].forward(x, opts.training, rec);
            stage(format("group", g).c_str(), x);
        }
        Tensor<T> projected = proj.forward(x);
        stage("proj", projected);
        Tensor<T> seq = permute(reshape(projected, {N, d, L}), {0, 2, 1});
        stage("flatten", seq);
        seq = encoder.forward(seq, rec);
        stage("encoder", seq);
        Tensor<T> grid = reshape(permute(seq, {0, 2, 1}), {N, d, H, W});
        stage("reshape", grid);
        Tensor<T> up = relu(head_bn.forward(deconv.forward(grid), opts.training));
        stage("deconv", up);
        result.heatmaps = head_conv.forward(up);
        stage("final", result.heatmaps);
        return result;
    }

    // Learnable parameters, in checkpoint order.
    ParamList<T> parameters() const {
        ParamList<T> out;
        backbone.collect("backbone", out);
        proj.collect("proj", out);
        encoder.collect("encoder", out);
        deconv.collect("deconv", out);
        head_bn.collect("head_bn", out);
        head_conv.collect("head_conv", out);
        return out;
    }

    // BN running statistics (persisted but not learnable).
    ParamList<T> buffers() const {
        ParamList<T> out;
        backbone.collect_buffers("backbone", out);
        head_bn.collect_buffers("head_bn", out);
        return out;
    }

    int64_t count_params() const { return parameters().total_count(); }
};

}  // namespace btk
