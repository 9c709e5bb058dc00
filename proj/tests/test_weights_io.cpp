#include <doctest.h>

#include <cstring>

#include "mqn/io.hpp"
#include "mqn/weights_io.hpp"
#include "oracles.hpp"

using namespace mqn;

namespace {

const ModelGraph& seeded()
{
    static const ModelGraph g = [] {
        ModelGraph m = build_mqn(MqnConfig{});
        init_weights(m, 3);
        const Tensor x[2] = {oracle::random_ldr_tensor(64, 64, 1), oracle::random_ldr_tensor(64, 64, 2)};
        m.calibration = calibrate_activations(m, x);
        return m;
    }();
    return g;
}

std::string error_of(const std::vector<std::uint8_t>& bytes)
{
    try {
        (void)load_weights(bytes);
    } catch (const FormatError& e) {
        return e.what();
    }
    return "";
}

// Little-endian fixture writer independent of the library's ByteWriter.
struct Le {
    std::vector<std::uint8_t> b;
    void u8(unsigned v) { b.push_back(static_cast<std::uint8_t>(v)); }
    void u16(unsigned v) { u8(v & 0xff), u8(v >> 8); }
    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i)
            u8((v >> (8 * i)) & 0xff);
    }
    void f32(float f)
    {
        std::uint32_t v;
        std::memcpy(&v, &f, 4);
        u32(v);
    }
    void str(const std::string& s)
    {
        u16(static_cast<unsigned>(s.size()));
        for (char c : s)
            u8(static_cast<unsigned char>(c));
    }
};

} // namespace

TEST_CASE("hand-written container parses to the expected tensors")
{
    Le f;
    for (char c : std::string("MQNW"))
        f.u8(static_cast<unsigned char>(c));
    f.u32(1);
    f.u32(2);
    // f32 of shape (2, 3) written with two dims.
    f.str("a.w");
    f.u8(0);
    f.u8(2);
    f.u32(2);
    f.u32(3);
    f.u8(0);
    for (int i = 0; i < 6; ++i)
        f.f32(static_cast<float>(i) * 0.5f);
    // i8 (1,1,1,2) with per-channel params on axis 3.
    f.str("q");
    f.u8(1);
    f.u8(4);
    for (std::uint32_t d : {1u, 1u, 1u, 2u})
        f.u32(d);
    f.u8(1);
    f.u8(3);
    f.u32(2);
    f.f32(0.25f);
    f.f32(0.5f);
    f.u32(0);
    f.u32(0);
    f.u8(0xff); // -1
    f.u8(7);
    REQUIRE(f.b.size() == 12 + (2 + 3 + 2 + 8 + 1 + 24) + (2 + 1 + 2 + 16 + 1 + 1 + 4 + 8 + 8 + 2));

    const auto t = read_container(f.b);
    REQUIRE(t.size() == 2);
    CHECK(t[0].name == "a.w");
    CHECK(t[0].tensor.shape() == Shape{1, 1, 2, 3});
    CHECK(t[0].tensor.at(0, 0, 1, 2) == 2.5f);
    CHECK_FALSE(t[0].quant);
    CHECK(t[1].tensor.dtype() == DType::i8);
    CHECK(t[1].tensor.at<std::int8_t>(0, 0, 0, 0) == -1);
    REQUIRE(t[1].quant);
    CHECK(t[1].quant->axis == 3);
    CHECK(t[1].quant->scales == std::vector<float>{0.25f, 0.5f});
    CHECK(t[1].quant->zero_points == std::vector<std::int32_t>{0, 0});

    // The writer produces the same bytes when ndim is 4.
    std::vector<NamedTensor> again = t;
    const auto out = write_container(again);
    CHECK(read_container(out)[0].tensor == t[0].tensor);
    CHECK(write_container(read_container(out)) == out);
}

TEST_CASE("save, load, save is byte-identical for every scheme")
{
    const auto float_bytes = save_weights(seeded());
    CHECK(save_weights(load_weights(float_bytes)) == float_bytes);
    const Tensor x = oracle::random_ldr_tensor(64, 64, 9);
    for (const QuantScheme& s : {QuantScheme::mixed(), QuantScheme::full_int8(), QuantScheme::dynamic(),
                                 QuantScheme::int16()}) {
        const ModelGraph q = quantize_model(seeded(), s, &*seeded().calibration);
        const auto bytes = save_weights(q);
        const ModelGraph back = load_weights(bytes);
        CHECK(back.scheme == s);
        CHECK(save_weights(back) == bytes);
        CHECK(forward_mixed(back, x) == forward_mixed(q, x));
    }
    const ModelGraph reloaded = load_weights(float_bytes);
    CHECK(forward_float(reloaded, x) == forward_float(seeded(), x));
    REQUIRE(reloaded.calibration);
    CHECK(reloaded.calibration->ranges == seeded().calibration->ranges);
    CHECK(reloaded.calibration->images == 2);
}

TEST_CASE("stored config travels with the weights")
{
    MqnConfig cfg;
    cfg.attention = AttentionKind::csa;
    cfg.head_relu = false;
    ModelGraph g = build_mqn(cfg);
    init_weights(g, 1);
    const auto bytes = save_weights(g);
    REQUIRE(stored_config(bytes));
    CHECK(stored_config(bytes)->to_text() == cfg.to_text());
    CHECK(load_weights(bytes).config.to_text() == cfg.to_text());
    CHECK(error_of(save_weights(seeded())).empty());
    CHECK_THROWS_AS(load_weights(bytes, MqnConfig{}), FormatError);
}

TEST_CASE("malformed containers")
{
    const auto good = save_weights(seeded());

    auto bad = good;
    bad[0] = 'X';
    CHECK(error_of(bad).find("bad magic") != std::string::npos);

    bad = good;
    bad[4] = 2;
    CHECK(error_of(bad).find("unsupported MQNW version") != std::string::npos);

    // Truncation inside a tensor names that tensor.
    const auto tensors = read_container(good);
    bad.assign(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(good.size() / 2));
    const std::string msg = error_of(bad);
    CHECK(msg.find("tensor '") != std::string::npos);
    CHECK(msg.find("offset") != std::string::npos);

    bad = good;
    bad.push_back(0);
    CHECK(error_of(bad).find("trailing") != std::string::npos);

    // Unknown dtype: the dtype byte of the first tensor follows its name.
    bad = good;
    const std::size_t name_len = bad[12] | (bad[13] << 8);
    bad[14 + name_len] = 9;
    CHECK(error_of(bad).find("unknown dtype") != std::string::npos);

    auto extra = tensors;
    extra.push_back({"nonexistent.w", Tensor::filled({1, 1, 1, 1}, 0.0f), {}});
    CHECK(error_of(write_container(extra)).find("unknown tensor 'nonexistent.w'") != std::string::npos);

    auto missing = tensors;
    std::erase_if(missing, [](const NamedTensor& t) { return t.name == "cbr1.w"; });
    CHECK(error_of(write_container(missing)).find("missing tensor 'cbr1.w'") != std::string::npos);

    auto reshaped = tensors;
    for (auto& t : reshaped)
        if (t.name == "cbr1.b")
            t.tensor = Tensor::filled({1, 1, 1, 3}, 0.0f);
    CHECK(error_of(write_container(reshaped)).find("cbr1.b") != std::string::npos);
}

TEST_CASE("file helpers report the path")
{
    CHECK_THROWS_WITH_AS(read_file("/nonexistent/dir/w.mqnw"), doctest::Contains("/nonexistent/dir/w.mqnw"), Error);
}
