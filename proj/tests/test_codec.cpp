#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "dreamvvt/codec.hpp"

using namespace dreamvvt;

namespace {

VideoTensor random_video(std::mt19937_64& rng, int t, int h, int w) {
    std::uniform_real_distribution<float> u(-1, 1);
    VideoTensor v(t, h, w);
    for (auto& x : v.data) x = u(rng);
    return v;
}

float max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    float m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST(Codec, PaperGeometry) {
    const VideoTensor v(16, 256, 256);
    const LatentVideo lat = encode_video(v);
    EXPECT_EQ(lat.t, 4);
    EXPECT_EQ(lat.h, 16);
    EXPECT_EQ(lat.w, 16);
    EXPECT_EQ(lat.c, 3072);
    EXPECT_EQ(patchify(lat).length(), 1024u);
    EXPECT_EQ(std::size_t(lat.t) * lat.h * lat.w * lat.c, std::size_t(16) * 256 * 256 * 3);
}

TEST(Codec, ZeroVideoZeroLatent) {
    const LatentVideo lat = encode_video(VideoTensor(4, 32, 16));
    for (float x : lat.data) EXPECT_EQ(x, 0.0f);
    const VideoTensor v = decode_video(LatentVideo(1, 2, 1, 3072));
    for (float x : v.data) EXPECT_EQ(x, 0.0f);
}

TEST(Codec, BadGeometryNamesDimension) {
    try {
        encode_video(VideoTensor(6, 32, 32));
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("T"), std::string::npos);
    }
    try {
        encode_video(VideoTensor(4, 30, 32));
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("H"), std::string::npos);
    }
    try {
        encode_video(VideoTensor(4, 32, 40));
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("W"), std::string::npos);
    }
    EXPECT_THROW(decode_video(LatentVideo(1, 1, 1, 100)), std::invalid_argument);
}

TEST(Codec, RoundTripBothWays) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        const VideoTensor v = random_video(rng, 4 * (1 + trial % 2), 16 * (1 + trial % 3), 32);
        EXPECT_LE(max_abs_diff(decode_video(encode_video(v)).data, v.data), 1e-5f);
        LatentVideo lat(1, 2, 2, 3072);
        std::normal_distribution<float> n(0, 1);
        for (auto& x : lat.data) x = n(rng);
        EXPECT_LE(max_abs_diff(encode_video(decode_video(lat)).data, lat.data), 1e-5f);
    }
}

TEST(Codec, OrthogonalPreservesNorm) {
    std::mt19937_64 rng(2);
    const VideoTensor v = random_video(rng, 4, 32, 32);
    const LatentVideo lat = encode_video(v);
    double a = 0, b = 0;
    for (float x : v.data) a += double(x) * x;
    for (float x : lat.data) b += double(x) * x;
    EXPECT_NEAR(a, b, 1e-6 * a);
}

TEST(Codec, Linear) {
    std::mt19937_64 rng(3);
    const VideoTensor x = random_video(rng, 4, 16, 16), y = random_video(rng, 4, 16, 16);
    VideoTensor z(4, 16, 16);
    for (std::size_t i = 0; i < z.data.size(); ++i) z.data[i] = 0.5f * x.data[i] - 2.0f * y.data[i];
    const auto ex = encode_video(x), ey = encode_video(y), ez = encode_video(z);
    for (std::size_t i = 0; i < ez.data.size(); ++i) EXPECT_NEAR(ez.data[i], 0.5f * ex.data[i] - 2.0f * ey.data[i], 1e-5);
}

TEST(Codec, TruncationIsConfigurable) {
    std::mt19937_64 rng(4);
    CodecConfig cfg;
    cfg.keep_channels = 64;
    const auto lat = encode_video(random_video(rng, 4, 16, 16), cfg);
    EXPECT_EQ(lat.c, 64);
    EXPECT_EQ(decode_video(lat, cfg).frames, 4);
}

TEST(Patchify, RowMajorOrderAndExactInverse) {
    std::mt19937_64 rng(5);
    LatentVideo lat(3, 2, 4, 5);
    std::normal_distribution<float> n(0, 1);
    for (auto& x : lat.data) x = n(rng);
    const auto seq = patchify(lat);
    ASSERT_EQ(seq.length(), 24u);
    std::size_t i = 0;
    for (int t = 0; t < 3; ++t)
        for (int h = 0; h < 2; ++h)
            for (int w = 0; w < 4; ++w, ++i) {
                EXPECT_EQ(seq.index_map[i], (std::array<int, 3>{t, h, w}));
                for (int c = 0; c < 5; ++c) EXPECT_EQ(seq.token(i)[c], lat.at(t, h, w, c));
            }
    EXPECT_EQ(unpatchify(seq).data, lat.data);
}

TEST(Patchify, SingleCellIsTheVector) {
    LatentVideo lat(1, 1, 1, 3);
    lat.data = {1, 2, 3};
    const auto seq = patchify(lat);
    ASSERT_EQ(seq.length(), 1u);
    EXPECT_EQ(seq.tokens, lat.data);
}

TEST(Keyframes, TokenCountLinearInK) {
    const Image img(32, 48, 3, 100.0f);
    EXPECT_EQ(encode_keyframes({}).length(), 0u);
    for (int k = 1; k <= 5; ++k) {
        const auto seq = encode_keyframes(std::vector<Image>(k, img));
        EXPECT_EQ(seq.length(), std::size_t(k) * 3 * 2);
        EXPECT_EQ(seq.channels, 768);
        EXPECT_EQ(seq.stream, Stream::image);
    }
    EXPECT_EQ(encode_keyframes(std::vector<Image>(2, Image(256, 256, 3))).length(), 512u);
    EXPECT_THROW(encode_keyframes({Image(32, 32, 3), Image(16, 32, 3)}), std::invalid_argument);
}

TEST(MaskPooling, MatchesBlockReduction) {
    std::mt19937_64 rng(6);
    std::bernoulli_distribution b(0.002);
    std::vector<Mask> masks(8, Mask(32, 48, 1, 0));
    for (auto& m : masks)
        for (auto& x : m.data) x = b(rng);
    const auto lat = resize_mask_to_latent(masks);
    ASSERT_EQ(lat.t, 2);
    ASSERT_EQ(lat.h, 3);
    ASSERT_EQ(lat.w, 2);
    for (int t = 0; t < 2; ++t)
        for (int h = 0; h < 3; ++h)
            for (int w = 0; w < 2; ++w) {
                bool any = false;
                for (int f = 4 * t; f < 4 * t + 4; ++f)
                    for (int y = 16 * h; y < 16 * h + 16; ++y)
                        for (int x = 16 * w; x < 16 * w + 16; ++x) any = any || masks[f].at(x, y);
                EXPECT_EQ(lat.at(t, h, w, 0), any ? 1.0f : 0.0f);
            }
}

TEST(MaskPooling, SinglePixelAndMonotone) {
    std::vector<Mask> masks(4, Mask(32, 32, 1, 0));
    masks[2].at(20, 3) = 1;
    const auto one = resize_mask_to_latent(masks);
    float total = 0;
    for (float x : one.data) total += x;
    EXPECT_EQ(total, 1.0f);
    EXPECT_EQ(one.at(0, 0, 1, 0), 1.0f);
    masks[0].at(1, 30) = 1;
    const auto two = resize_mask_to_latent(masks);
    for (std::size_t i = 0; i < one.data.size(); ++i) EXPECT_GE(two.data[i], one.data[i]);
    std::vector<Mask> full(4, Mask(32, 32, 1, 1));
    for (float x : resize_mask_to_latent(full).data) EXPECT_EQ(x, 1.0f);
    EXPECT_THROW(resize_mask_to_latent(std::vector<Mask>(3, Mask(32, 32, 1, 0))), std::invalid_argument);
}

TEST(LatentFile, RoundTripAndHeader) {
    std::mt19937_64 rng(7);
    LatentVideo lat(2, 1, 3, 7);
    std::normal_distribution<float> n(0, 1);
    for (auto& x : lat.data) x = n(rng);
    const auto path = (std::filesystem::temp_directory_path() / "dreamvvt_test_latent.bin").string();
    write_latent(path, lat, Stream::video, 0x0123456789ABCDEFULL);
    EXPECT_EQ(std::filesystem::file_size(path), 32u + lat.data.size() * 4);
    const auto f = read_latent(path);
    EXPECT_EQ(f.latent.data, lat.data);
    EXPECT_EQ(f.latent.t, 2);
    EXPECT_EQ(f.latent.c, 7);
    EXPECT_EQ(f.stream, Stream::video);
    EXPECT_EQ(f.config_hash, 0x0123456789ABCDEFULL);
    std::ifstream in(path, std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    EXPECT_EQ(std::string(magic, 4), "DVLT");
    std::filesystem::remove(path);
}
