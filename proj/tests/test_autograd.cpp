#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "dreamvvt/autograd.hpp"

using namespace dreamvvt;

namespace {

using P = ParamPtr<double>;
using Build = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

P make(std::mt19937_64& rng, const std::string& name, int r, int c, double sd = 1.0) {
    std::normal_distribution<double> n(0, sd);
    Tensor<double> t(r, c);
    for (auto& x : t.v) x = n(rng);
    return std::make_shared<Param<double>>(name, t, true);
}

// Loss is mse(build(...), target) so every output element reaches the gradient.
double loss_of(const std::vector<P>& ps, const Build& f, const Tensor<double>& target) {
    Tape<double> tape;
    std::vector<Var> vs;
    for (const auto& p : ps) vs.push_back(tape.param(p));
    return tape.value(tape.mse(f(tape, vs), target)).v[0];
}

double max_rel_error(const std::vector<P>& ps, const Build& f, std::mt19937_64& rng) {
    Tensor<double> target;
    {
        Tape<double> tape;
        std::vector<Var> vs;
        for (const auto& p : ps) vs.push_back(tape.param(p));
        const auto out = tape.value(f(tape, vs));
        target = Tensor<double>(out.rows, out.cols);
        std::normal_distribution<double> n(0, 1);
        for (auto& x : target.v) x = n(rng);
    }
    for (const auto& p : ps) p->zero_grad();
    {
        Tape<double> tape;
        std::vector<Var> vs;
        for (const auto& p : ps) vs.push_back(tape.param(p));
        tape.backward(tape.mse(f(tape, vs), target));
    }
    double worst = 0;
    const double h = 1e-6;
    for (const auto& p : ps)
        for (std::size_t i = 0; i < p->value.v.size(); ++i) {
            const double keep = p->value.v[i];
            p->value.v[i] = keep + h;
            const double up = loss_of(ps, f, target);
            p->value.v[i] = keep - h;
            const double down = loss_of(ps, f, target);
            p->value.v[i] = keep;
            const double fd = (up - down) / (2 * h);
            const double an = p->grad.v[i];
            worst = std::max(worst, std::fabs(fd - an) / std::max(1e-6, std::fabs(fd) + std::fabs(an)));
        }
    return worst;
}

}  // namespace

class OpGradient : public ::testing::Test {
protected:
    std::mt19937_64 rng{77};
};

TEST_F(OpGradient, Matmul) {
    const std::vector<P> ps = {make(rng, "a", 3, 4), make(rng, "b", 4, 5)};
    EXPECT_LT(max_rel_error(ps, [](auto& t, auto& v) { return t.matmul(v[0], v[1]); }, rng), 1e-6);
}

TEST_F(OpGradient, MatmulNT) {
    const std::vector<P> ps = {make(rng, "a", 3, 4), make(rng, "b", 5, 4)};
    EXPECT_LT(max_rel_error(ps, [](auto& t, auto& v) { return t.matmul_nt(v[0], v[1]); }, rng), 1e-6);
}

TEST_F(OpGradient, AddSubScale) {
    const std::vector<P> ps = {make(rng, "a", 3, 4), make(rng, "b", 3, 4)};
    EXPECT_LT(max_rel_error(ps, [](auto& t, auto& v) { return t.scale(t.sub(t.add(v[0], v[1]), v[1]), 1.7); }, rng),
              1e-6);
}

TEST_F(OpGradient, AddRowAndModulate) {
    const std::vector<P> ps = {make(rng, "x", 4, 3), make(rng, "r", 1, 3), make(rng, "s", 1, 3)};
    EXPECT_LT(max_rel_error(ps, [](auto& t, auto& v) { return t.modulate(t.add_row(v[0], v[1]), v[1], v[2]); }, rng),
              1e-6);
}

TEST_F(OpGradient, LayerNorm) {
    const std::vector<P> ps = {make(rng, "x", 3, 6)};
    EXPECT_LT(max_rel_error(ps, [](auto& t, auto& v) { return t.layer_norm(v[0]); }, rng), 1e-5);
}

TEST_F(OpGradient, Activations) {
    const std::vector<P> ps = {make(rng, "x", 3, 5, 2.0)};
    EXPECT_LT(max_rel_error(ps, [](auto& t, auto& v) { return t.silu(v[0]); }, rng), 1e-6);
    EXPECT_LT(max_rel_error(ps, [](auto& t, auto& v) { return t.gelu(v[0]); }, rng), 1e-6);
}

TEST_F(OpGradient, Softmax) {
    const std::vector<P> ps = {make(rng, "x", 4, 5)};
    EXPECT_LT(max_rel_error(ps, [](auto& t, auto& v) { return t.softmax_rows(v[0]); }, rng), 1e-6);
}

TEST_F(OpGradient, ConcatAndSlice) {
    const std::vector<P> ps = {make(rng, "a", 2, 4), make(rng, "b", 3, 4), make(rng, "c", 5, 2)};
    auto f = [](Tape<double>& t, const std::vector<Var>& v) {
        Var rows = t.concat_rows({v[0], v[1]});
        Var mid = t.slice_rows(rows, 1, 3);
        Var cols = t.concat_cols({t.slice_cols(rows, 1, 2), v[2]});
        return t.matmul_nt(t.slice_rows(cols, 0, 3), t.slice_cols(mid, 0, 4));
    };
    EXPECT_LT(max_rel_error(ps, f, rng), 1e-6);
}

TEST(Tape, ValuesMatchDefinitions) {
    Tape<double> t;
    Tensor<double> a(2, 2);
    a.v = {1, 2, 3, 4};
    Tensor<double> b(2, 2);
    b.v = {0, 1, 1, 0};
    EXPECT_EQ(t.value(t.matmul(t.constant(a), t.constant(b))).v, (std::vector<double>{2, 1, 4, 3}));
    EXPECT_EQ(t.value(t.matmul_nt(t.constant(a), t.constant(b))).v, (std::vector<double>{2, 1, 4, 3}));
    const auto sm = t.value(t.softmax_rows(t.constant(a)));
    for (int r = 0; r < 2; ++r) EXPECT_NEAR(sm(r, 0) + sm(r, 1), 1.0, 1e-15);
    EXPECT_NEAR(sm(0, 1) / sm(0, 0), std::exp(1.0), 1e-12);
    const auto ln = t.value(t.layer_norm(t.constant(a)));
    EXPECT_NEAR(ln(0, 0), -1.0, 1e-5);
    EXPECT_NEAR(ln(0, 1), 1.0, 1e-5);
    EXPECT_NEAR(t.value(t.mse(t.constant(a), b)).v[0], (1 + 1 + 4 + 16) / 4.0, 1e-15);
}

TEST(Tape, FrozenParamsGetNoGradient) {
    auto w = std::make_shared<Param<double>>("w", Tensor<double>(2, 2, 1.0), false);
    auto u = std::make_shared<Param<double>>("u", Tensor<double>(2, 2, 1.0), true);
    Tape<double> t;
    Var y = t.matmul(t.param(w), t.param(u));
    t.backward(t.mse(y, Tensor<double>(2, 2, 0.0)));
    for (double g : w->grad.v) EXPECT_EQ(g, 0.0);
    for (double g : u->grad.v) EXPECT_NE(g, 0.0);
}

TEST(Tape, ShapeErrors) {
    Tape<double> t;
    Var a = t.constant(Tensor<double>(2, 3));
    EXPECT_THROW(t.matmul(a, a), std::invalid_argument);
    EXPECT_THROW(t.add(a, t.constant(Tensor<double>(3, 2))), std::invalid_argument);
    EXPECT_THROW(t.backward(a), std::invalid_argument);
}
