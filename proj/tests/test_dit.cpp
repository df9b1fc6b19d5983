#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "dreamvvt/checkpoint.hpp"
#include "dreamvvt/dit.hpp"
#include "support.hpp"

using namespace dreamvvt;
using support::max_abs;

namespace {

bool is_text_group(const std::string& g) { return g == "text_in" || g == "text_stream"; }

}  // namespace

TEST(LoRA, ZeroUpIsIdentity) {
    std::mt19937_64 rng(1);
    Dit<double> model(support::small_config());
    const auto& blk = model.blocks()[0];
    const auto x = support::random_tensor<double>(rng, 5, 16);
    EXPECT_EQ(lora_linear(x, blk.video->q, &*blk.video_lora.q), lora_linear<double>(x, blk.video->q, nullptr));
}

TEST(LoRA, RankOneOuterProduct) {
    Linear<double> base{std::make_shared<Param<double>>("w", Tensor<double>(3, 2), false), nullptr};
    LoRAAdapter<double> a;
    a.rank = 1;
    a.scale = 1.0;
    Tensor<double> e(3, 1), f(1, 2), x(1, 3);
    e.v = {1, -2, 0.5};
    f.v = {3, 4};
    x.v = {2, 1, 4};
    a.down = std::make_shared<Param<double>>("a", e, true);
    a.up = std::make_shared<Param<double>>("b", f, true);
    const double ex = 1 * 2 + -2 * 1 + 0.5 * 4;  // e . x
    EXPECT_EQ(lora_linear(x, base, &a).v, (std::vector<double>{3 * ex, 4 * ex}));
}

TEST(LoRA, MatchesDenseMatrix) {
    std::mt19937_64 rng(2);
    Dit<double> model(support::small_config());
    support::randomize_adapters(model, rng);
    const auto& blk = model.blocks()[1];
    const auto x = support::random_tensor<double>(rng, 4, 16);
    const auto got = lora_linear(x, blk.image->k, &*blk.image_lora.k);
    EXPECT_LT(support::max_abs(got.v, support::dense_linear(x.v, 4, blk.image->k, blk.image_lora.k)), 1e-12);
    Tape<double> t;
    EXPECT_THROW(lora_linear(t, t.constant(Tensor<double>(1, 3)), blk.image->k, nullptr), std::invalid_argument);
}

TEST(JointAttention, SingleVideoTokenIsOutputOfValue) {
    std::mt19937_64 rng(3);
    Dit<double> model(support::small_config());
    const auto& blk = model.blocks()[0];
    const auto x = support::random_tensor<double>(rng, 1, 16);
    Tape<double> t;
    JointBatch in;
    in.video = t.constant(x);
    const auto out = joint_attention(t, in, blk, 2);
    const auto v = lora_linear(x, blk.video->v, &*blk.video_lora.v);
    const auto want = lora_linear(v, blk.video->o, &*blk.video_lora.o);
    EXPECT_LT(max_abs(t.value(out.video), want), 1e-12);
    EXPECT_FALSE(out.text.valid());
    EXPECT_FALSE(out.image.valid());
}

TEST(JointAttention, DemuxLengthsAndEmptyVideo) {
    std::mt19937_64 rng(4);
    Dit<double> model(support::small_config());
    const auto& blk = model.blocks()[0];
    for (int trial = 0; trial < 10; ++trial) {
        const int lt = trial % 4, li = (trial * 3) % 5, lv = 1 + trial;
        Tape<double> t;
        JointBatch in;
        if (lt) in.text = t.constant(support::random_tensor<double>(rng, lt, 16));
        if (li) in.image = t.constant(support::random_tensor<double>(rng, li, 16));
        in.video = t.constant(support::random_tensor<double>(rng, lv, 16));
        const auto out = joint_attention(t, in, blk, 2);
        EXPECT_EQ(out.text.valid() ? t.rows(out.text) : 0, lt);
        EXPECT_EQ(out.image.valid() ? t.rows(out.image) : 0, li);
        EXPECT_EQ(t.rows(out.video), lv);
    }
    Tape<double> t;
    JointBatch none;
    none.text = t.constant(support::random_tensor<double>(rng, 2, 16));
    EXPECT_THROW(joint_attention(t, none, blk, 2), std::invalid_argument);
}

TEST(JointAttention, ImageTokensInfluenceVideo) {
    std::mt19937_64 rng(5);
    Dit<double> model(support::small_config());
    const auto& blk = model.blocks()[0];
    auto img = support::random_tensor<double>(rng, 3, 16);
    const auto vid = support::random_tensor<double>(rng, 4, 16);
    auto run = [&](const Tensor<double>& image) {
        Tape<double> t;
        JointBatch in;
        in.image = t.constant(image);
        in.video = t.constant(vid);
        return t.value(joint_attention(t, in, blk, 2).video);
    };
    const auto a = run(img);
    img(1, 3) += 0.5;
    EXPECT_GT(max_abs(run(img), a), 0.0);
}

TEST(JointAttention, RowsAreStochastic) {
    std::mt19937_64 rng(6);
    Dit<double> model(support::small_config());
    const auto in = support::random_inputs<double>(rng, model.config(), 5, 2, 2, 2, 3);
    AttentionTrace<double> trace;
    Tape<double> t;
    model.forward(t, in, 0.4, AttentionMode::joint, true, &trace);
    ASSERT_EQ(trace.probabilities.size(), 4u);
    for (const auto& p : trace.probabilities) {
        EXPECT_EQ(p.rows, 5 + 12 + 12);
        for (int r = 0; r < p.rows; ++r) {
            double s = 0;
            for (int c = 0; c < p.cols; ++c) s += p(r, c);
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
    }
}

TEST(Block, ZeroedBranchesAreIdentity) {
    std::mt19937_64 rng(7);
    Dit<double> model(support::small_config());
    auto& blk = model.blocks()[0];
    for (auto* w : {blk.text.get(), blk.video.get()})
        for (auto* l : {&w->o, &w->ff_out}) {
            l->weight->value.fill(0);
            l->bias->value.fill(0);
        }
    Tape<double> t;
    JointBatch x;
    x.text = t.constant(support::random_tensor<double>(rng, 3, 16));
    x.image = t.constant(support::random_tensor<double>(rng, 2, 16));
    x.video = t.constant(support::random_tensor<double>(rng, 4, 16));
    Var cond = t.constant(support::random_tensor<double>(rng, 1, 16));
    const auto y = model.block(t, x, blk, cond, AttentionMode::joint, {}, true, nullptr);
    EXPECT_EQ(t.value(y.text), t.value(x.text));
    EXPECT_EQ(t.value(y.image), t.value(x.image));
    EXPECT_EQ(t.value(y.video), t.value(x.video));
}

TEST(Block, AttentionPlusResidualMatchesHandRolledReference) {
    std::mt19937_64 rng(8);
    Dit<double> model(support::small_config());
    auto& blk = model.blocks()[0];
    blk.video->ff_out.weight->value.fill(0);
    blk.video->ff_out.bias->value.fill(0);
    Tape<double> t;
    const auto xv = support::random_tensor<double>(rng, 4, 16);
    const auto cond_v = support::random_tensor<double>(rng, 1, 16);
    JointBatch x;
    x.video = t.constant(xv);
    const auto y = t.value(model.block(t, x, blk, t.constant(cond_v), AttentionMode::joint, {}, true, nullptr).video);

    // Reference: modulation rows, row-wise layer norm, single-stream attention, residual.
    const auto mod = support::dense_linear(cond_v.v, 1, blk.video->modulation, std::optional<LoRAAdapter<double>>{});
    std::vector<double> normed(xv.v.size());
    for (int r = 0; r < 4; ++r) {
        double mean = 0, var = 0;
        for (int c = 0; c < 16; ++c) mean += xv(r, c) / 16;
        for (int c = 0; c < 16; ++c) var += (xv(r, c) - mean) * (xv(r, c) - mean) / 16;
        for (int c = 0; c < 16; ++c)
            normed[r * 16 + c] = (xv(r, c) - mean) / std::sqrt(var + 1e-6) * (1 + mod[16 + c]) + mod[c];
    }
    const auto q = support::dense_linear(normed, 4, blk.video->q, blk.video_lora.q);
    const auto k = support::dense_linear(normed, 4, blk.video->k, blk.video_lora.k);
    const auto v = support::dense_linear(normed, 4, blk.video->v, blk.video_lora.v);
    const auto o = support::dense_linear(support::flat_multihead(q, k, v, 4, 16, 2), 4, blk.video->o, blk.video_lora.o);
    for (std::size_t i = 0; i < o.size(); ++i) EXPECT_NEAR(y.v[i], xv.v[i] + o[i], 1e-10);
}

TEST(Model, PureAndDeterministic) {
    std::mt19937_64 rng(9);
    Dit<double> model(support::small_config());
    const auto in = support::random_inputs<double>(rng, model.config(), 4, 1, 1, 2, 2);
    EXPECT_EQ(support::forward_value(model, in, 0.3), support::forward_value(model, in, 0.3));
    Dit<double> twin(support::small_config());
    EXPECT_EQ(support::forward_value(twin, in, 0.3), support::forward_value(model, in, 0.3));
}

TEST(Model, ZeroInitAdaptersMatchBaseModel) {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 5; ++trial) {
        Dit<double> model(support::small_config(100 + trial));
        const auto in = support::random_inputs<double>(rng, model.config(), 3, 1, 2, 2, 2);
        EXPECT_LE(max_abs(support::forward_value(model, in, 0.5, AttentionMode::joint, true),
                          support::forward_value(model, in, 0.5, AttentionMode::joint, false)),
                  1e-6);
    }
}

TEST(Model, TextParametersNeverReceiveGradient) {
    std::mt19937_64 rng(11);
    Dit<double> model(support::small_config());
    support::randomize_adapters(model, rng);
    const auto in = support::random_inputs<double>(rng, model.config(), 4, 1, 1, 2, 2);
    Tape<double> t;
    t.backward(t.mse(model.forward(t, in, 0.7), support::random_tensor<double>(rng, 4, 5)));
    std::size_t checked = 0;
    for (const auto& p : model.parameters())
        if (is_text_group(p->group)) {
            EXPECT_FALSE(p->trainable) << p->name;
            for (double g : p->grad.v) EXPECT_EQ(g, 0.0) << p->name;
            ++checked;
        }
    EXPECT_GT(checked, 0u);
}

TEST(Model, VideoAndImageShareStorage) {
    std::mt19937_64 rng(12);
    Dit<double> model(support::small_config());
    auto& blk = model.blocks()[0];
    EXPECT_EQ(blk.image.get(), blk.video.get());
    EXPECT_NE(blk.image_lora.q->down.get(), blk.video_lora.q->down.get());
    const auto x = support::random_tensor<double>(rng, 2, 16);
    blk.video->k.weight->value(3, 4) += 1.0;
    EXPECT_EQ(lora_linear<double>(x, blk.image->k, nullptr), lora_linear<double>(x, blk.video->k, nullptr));
}

TEST(Model, GradientCheckEveryTrainableGroup) {
    for (std::uint64_t seed = 1; seed <= 2; ++seed) {
        std::mt19937_64 rng(seed);
        Dit<double> model(support::small_config(seed));
        support::randomize_adapters(model, rng);
        const auto in = support::random_inputs<double>(rng, model.config(), 3, 1, 1, 2, 2);
        const auto errs = support::gradient_check(model, in, 0.35, AttentionMode::joint, rng, 4);
        for (const char* g : {"image_in", "video_in", "lora_video", "lora_image", "lora_final"}) {
            ASSERT_TRUE(errs.count(g)) << g;
            EXPECT_LE(errs.at(g), 1e-3) << g;
        }
    }
}

TEST(Model, GradientCheckReferenceMode) {
    std::mt19937_64 rng(13);
    Dit<double> model(support::small_config(7));
    support::randomize_adapters(model, rng);
    auto in = support::random_inputs<double>(rng, model.config(), 3, 1, 2, 2, 2);
    in.frame_lengths = {4, 4};
    const auto errs = support::gradient_check(model, in, 0.0, AttentionMode::reference, rng, 4);
    for (const auto& [g, e] : errs) EXPECT_LE(e, 1e-3) << g;
}

TEST(Report, ClosedFormCounts) {
    DitConfig c;  // d = 64, r = 4, 2 blocks
    c.final_lora = false;
    Dit<float> model(c);
    const auto r = model.parameter_report();
    const std::size_t d = 64, rank = 4;
    const std::size_t adapters = 2 * 2 * 4 * (2 * d * rank);  // blocks x streams x {q,k,v,o}
    const std::size_t inputs = (c.image_channels + 1) * d + (c.video_channels + 1) * d;
    EXPECT_EQ(r.groups.at("lora_video").trainable + r.groups.at("lora_image").trainable, adapters);
    EXPECT_EQ(r.trainable, adapters + inputs);
    EXPECT_NEAR(r.trainable_fraction(), double(r.trainable) / double(r.total), 1e-15);

    DitConfig c2 = c;
    c2.lora_rank = 8;
    const auto r2 = Dit<float>(c2).parameter_report();
    EXPECT_EQ(r2.groups.at("lora_video").total, 2 * r.groups.at("lora_video").total);
    EXPECT_EQ(r2.groups.at("lora_image").total, 2 * r.groups.at("lora_image").total);

    DitConfig c0 = c;
    c0.lora_rank = 0;
    c0.train_input_projections = false;
    EXPECT_EQ(Dit<float>(c0).parameter_report().trainable_fraction(), 0.0);
}

TEST(ReferenceAttention, MatchesFlatConcatenation) {
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 5; ++trial) {
        Dit<double> model(support::small_config(30 + trial));
        support::randomize_adapters(model, rng);
        const auto& blk = model.blocks()[trial % 2];
        const int k = 1 + trial % 3, rows = 3, g_rows = trial % 2 ? 0 : 4;
        std::vector<std::vector<double>> frames;
        Tape<double> t;
        std::vector<Var> vars;
        for (int i = 0; i < k; ++i) {
            const auto f = support::random_tensor<double>(rng, rows, 16);
            frames.push_back(f.v);
            vars.push_back(t.constant(f));
        }
        const auto g = support::random_tensor<double>(rng, g_rows, 16);
        const auto outs = multiframe_reference_attention(t, vars, g_rows ? t.constant(g) : Var{}, blk, 2);
        std::vector<double> got;
        for (Var o : outs) got.insert(got.end(), t.value(o).v.begin(), t.value(o).v.end());
        EXPECT_LE(support::max_abs(got, support::reference_by_concatenation(frames, rows, g.v, g_rows, blk, 16, 2)), 1e-6);
    }
}

TEST(ReferenceAttention, SingleFrameIsSelfAttentionAndSymmetric) {
    std::mt19937_64 rng(15);
    Dit<double> model(support::small_config());
    const auto& blk = model.blocks()[0];
    const auto f = support::random_tensor<double>(rng, 4, 16);
    Tape<double> t;
    JointBatch jb;
    jb.video = t.constant(f);
    const auto self = t.value(joint_attention(t, jb, blk, 2).video);
    const auto one = t.value(multiframe_reference_attention(t, {t.constant(f)}, Var{}, blk, 2)[0]);
    EXPECT_LT(max_abs(self, one), 1e-12);
    const auto two = multiframe_reference_attention(t, {t.constant(f), t.constant(f)}, Var{}, blk, 2);
    EXPECT_EQ(t.value(two[0]), t.value(two[1]));
    EXPECT_THROW(multiframe_reference_attention(t, {}, Var{}, blk, 2), std::invalid_argument);
}

TEST(Checkpoint, BitExactRoundTrip) {
    std::mt19937_64 rng(16);
    Dit<float> model(support::small_config());
    for (const auto& p : model.parameters())
        for (auto& x : p->value.v) x += float(std::normal_distribution<double>(0, 1e-3)(rng));
    const auto path = std::filesystem::temp_directory_path() / "dreamvvt_test_ckpt.json";
    save_checkpoint(model, path);
    const Dit<float> back = load_checkpoint<float>(path);
    EXPECT_EQ(back.config(), model.config());
    ASSERT_EQ(back.parameters().size(), model.parameters().size());
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
        EXPECT_EQ(back.parameters()[i]->value, model.parameters()[i]->value);
        EXPECT_EQ(back.parameters()[i]->trainable, model.parameters()[i]->trainable);
    }
    EXPECT_EQ(back.blocks()[0].image.get(), back.blocks()[0].video.get());
    std::filesystem::remove(path);
    std::filesystem::remove(checkpoint_payload_path(path));
}
