#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "physiowave/checkpoint.hpp"
#include "physiowave/model.hpp"

using namespace pwv;
using D = double;
using V = Var<double>;

namespace {

EncoderConfig tiny_cfg() {
    EncoderConfig cfg;
    cfg.dim = 16;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.dec_dim = 12;
    cfg.dec_layers = 2;
    cfg.dec_heads = 2;
    return cfg;
}

Tensor<D> random_tokens(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<D> t({n, d});
    for (auto& v : t.data) v = rng.uniform(-1, 1);
    return t;
}

std::vector<double> iota_positions(std::size_t n) {
    std::vector<double> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<double>(i % 4);
    return p;
}

}  // namespace

TEST_CASE("encoder preset geometry matches the published table") {
    Rng rng(1);
    auto small = make_model<D>(EncoderConfig::preset("small"), 64, rng);
    REQUIRE(small.encoder.size() == 6);
    REQUIRE(small.cfg.heads == 8);
    REQUIRE(small.cfg.dim == 256);
    REQUIRE(small.cfg.dec_dim == 256);
    REQUIRE(small.decoder.size() == 8);
    REQUIRE(small.cfg.dec_heads == 8);
    REQUIRE(small.cfg.mlp_dim() == 1024);
    REQUIRE_THROWS_AS(EncoderConfig::preset("tiny"), ConfigError);
}

TEST_CASE("preset encoder parameter counts sit within 15% of 5M/15M/37M") {
    Rng rng(2);
    struct Row {
        const char* name;
        double target;
    } rows[] = {{"small", 5e6}, {"base", 15e6}, {"large", 37e6}};
    for (auto [name, target] : rows) {
        auto st = make_model<D>(EncoderConfig::preset(name), 64, rng);
        double count = static_cast<double>(st.encoder_parameter_count());
        INFO(name << " encoder parameters: " << count);
        REQUIRE(std::fabs(count - target) / target < 0.15);
    }
}

TEST_CASE("eval-mode encoder forward is bit-identical across calls") {
    Rng rng(3);
    auto st = make_model<D>(tiny_cfg(), 8, rng);
    auto tokens = random_tokens(12, 16, 5);
    auto pos = iota_positions(12);
    auto a = encoder_forward(st, V::constant(tokens), pos);
    auto b = encoder_forward(st, V::constant(tokens), pos);
    REQUIRE(a.value().data == b.value().data);
    REQUIRE(a.value().shape == tokens.shape);
}

TEST_CASE("train-mode drop-path perturbs deeper blocks") {
    Rng rng(4);
    auto cfg = tiny_cfg();
    cfg.drop_path = 0.9;
    auto st = make_model<D>(cfg, 8, rng);
    auto tokens = random_tokens(12, 16, 7);
    auto pos = iota_positions(12);
    auto eval = encoder_forward(st, V::constant(tokens), pos);
    Rng drop(11);
    auto train = encoder_forward(st, V::constant(tokens), pos, true, &drop);
    double diff = 0;
    for (std::size_t i = 0; i < eval.value().size(); ++i)
        diff += std::fabs(eval.value()[i] - train.value()[i]);
    REQUIRE(diff > 0.0);
}

TEST_CASE("decoder output width equals the patch width and respects zero head") {
    Rng rng(5);
    auto st = make_model<D>(tiny_cfg(), 8, rng);
    auto lat = random_tokens(12, 16, 9);
    auto rec = decoder_forward(st, V::constant(lat));
    REQUIRE(rec.value().shape == std::vector<std::size_t>{12, 8});

    st.head_w.value().fill(0.0);
    st.head_b.value().fill(0.0);
    auto zero_lat = V::constant(Tensor<D>({12, 16}));
    auto rec0 = decoder_forward(st, zero_lat);
    for (auto v : rec0.value().data) REQUIRE(v == 0.0);
}

TEST_CASE("pretrain loss sees only masked patches") {
    Rng rng(6);
    PatchGrid<D> grid;
    grid.rows = 2;
    grid.npatch = 3;
    grid.width = 4;
    grid.patches = random_tokens(6, 4, 13);
    MaskPlan plan;
    plan.rows = 2;
    plan.npatch = 3;
    plan.keep = {1, 0, 1, 0, 1, 1};  // rows 1 and 3 masked

    Tensor<D> recon = grid.patches;  // perfect everywhere
    // wreck every unmasked reconstruction
    for (std::size_t i : {0u, 2u, 4u, 5u})
        for (std::size_t u = 0; u < 4; ++u) recon.at(i, u) += 100.0;
    auto loss = pretrain_loss(V::constant(recon), grid, plan);
    REQUIRE(loss.item() == 0.0);

    // uniform diff of 2 on a single masked patch
    MaskPlan one = plan;
    one.keep = {1, 0, 1, 1, 1, 1};
    Tensor<D> recon2 = grid.patches;
    for (std::size_t u = 0; u < 4; ++u) recon2.at(1, u) += 2.0;
    auto loss2 = pretrain_loss(V::constant(recon2), grid, one);
    REQUIRE(loss2.item() == Catch::Approx(1.5));

    // perturbing unmasked output leaves the loss bit-identical
    Tensor<D> recon3 = recon2;
    recon3.at(2, 1) += 55.5;
    auto loss3 = pretrain_loss(V::constant(recon3), grid, one);
    REQUIRE(loss3.item() == loss2.item());

    MaskPlan none = plan;
    none.keep = {1, 1, 1, 1, 1, 1};
    REQUIRE_THROWS_AS(pretrain_loss(V::constant(recon2), grid, none), ShapeError);
}

TEST_CASE("tiny end-to-end graph passes the sampled gradient check") {
    Rng rng(7);
    auto st = make_model<D>(tiny_cfg(), 6, rng);
    PatchGrid<D> grid;
    grid.rows = 3;
    grid.npatch = 4;
    grid.width = 6;
    grid.patches = random_tokens(12, 6, 15);
    MaskPlan plan;
    plan.rows = 3;
    plan.npatch = 4;
    plan.keep = {1, 0, 1, 0, 0, 1, 1, 0, 1, 1, 0, 1};
    auto tokens = random_tokens(12, 16, 17);
    auto pos = iota_positions(12);

    auto fn = [&](const std::vector<V>&) {
        auto lat = encoder_forward(st, V::constant(tokens), pos);
        auto rec = decoder_forward(st, lat);
        return pretrain_loss(rec, grid, plan);
    };
    // a spread of parameters across both stacks
    std::vector<V> probes{st.encoder[0].wq.var, st.encoder[1].w2.var, st.enc_ln_g.var,
                          st.dec_proj_w.var, st.decoder[1].wv.var, st.head_w.var, st.head_b.var};
    REQUIRE(grad_check<D>(fn, probes, 8) < 1e-3);
}

TEST_CASE("checkpoint save/load roundtrip is bit-stable") {
    Rng rng(8);
    auto st = make_model<D>(tiny_cfg(), 8, rng);
    auto params = st.parameters();
    auto p1 = (std::filesystem::temp_directory_path() / "pwv_ck_a.ckpt").string();
    auto p2 = (std::filesystem::temp_directory_path() / "pwv_ck_b.ckpt").string();
    checkpoint_write<D>(p1, params, "dim=16\nlayers=2\n", 123);

    auto st2 = make_model<D>(tiny_cfg(), 8, rng);  // different random init
    auto params2 = st2.parameters();
    auto info = checkpoint_read<D>(p1, params2);
    REQUIRE(info.step == 123);
    REQUIRE(info.config_echo == "dim=16\nlayers=2\n");
    checkpoint_write<D>(p2, params2, info.config_echo, info.step);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), {});
    std::string b2((std::istreambuf_iterator<char>(f2)), {});
    REQUIRE(b1 == b2);

    // loaded values match the saved model at f32 precision
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < params[i]->size(); ++j)
            REQUIRE(params2[i]->value().data[j] ==
                    static_cast<double>(static_cast<float>(params[i]->value().data[j])));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("checkpoint rejects mismatched models") {
    Rng rng(9);
    auto st = make_model<D>(tiny_cfg(), 8, rng);
    auto path = (std::filesystem::temp_directory_path() / "pwv_ck_c.ckpt").string();
    checkpoint_write<D>(path, st.parameters(), "", 1);
    auto other_cfg = tiny_cfg();
    other_cfg.layers = 3;
    auto wrong = make_model<D>(other_cfg, 8, rng);
    auto wrong_params = wrong.parameters();
    REQUIRE_THROWS_AS(checkpoint_read<D>(path, wrong_params), DataError);
    std::remove(path.c_str());
}
