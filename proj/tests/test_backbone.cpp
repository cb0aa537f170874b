#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mixt/backbone.hpp"
#include "mixt/checkpoint.hpp"

using namespace mixt;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

BackboneConfig tiny_config() {
    BackboneConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.ffn_dim = 16;
    cfg.patch_size = 8;
    cfg.vocab_size = 23;
    cfg.max_positions = 64;
    cfg.max_target_positions = 12;
    cfg.max_image_patches = 16;
    return cfg;
}

Image noise_image(int h, int w, uint64_t seed) {
    Image img(h, w);
    Rng rng(seed);
    for (auto& b : img.rgb) b = static_cast<uint8_t>(rng.next_below(256));
    return img;
}

}  // namespace

TEST_CASE("parameter init is deterministic and biases are zero", "[backbone]") {
    const BackboneConfig cfg = tiny_config();
    const ParameterStore a = init_backbone_params(cfg, 7);
    const ParameterStore b = init_backbone_params(cfg, 7);
    const ParameterStore c = init_backbone_params(cfg, 8);
    REQUIRE(a.checksum() == b.checksum());
    REQUIRE(a.checksum() != c.checksum());

    for (int i = 0; i < a.count(); ++i) {
        const std::string& n = a.name(i);
        const bool is_bias = n.find(".b") != std::string::npos && n.find("beta") == std::string::npos;
        if (is_bias || n.find("beta") != std::string::npos) {
            for (double v : a.value(i).data) REQUIRE(v == 0.0);
        }
    }
}

TEST_CASE("projection weights have std near 1/sqrt(d_model)", "[backbone]") {
    BackboneConfig cfg = tiny_config();
    cfg.d_model = 64;
    cfg.n_heads = 4;
    cfg.ffn_dim = 64;
    cfg.vocab_size = 400;
    const ParameterStore store = init_backbone_params(cfg, 3);
    const Tensor& w = store.value("backbone.tok_emb");  // 400*64 = 25600 entries
    REQUIRE(w.size() >= 10000);
    double sum = 0, sq = 0;
    for (double v : w.data) {
        sum += v;
        sq += v * v;
    }
    const double n = static_cast<double>(w.size());
    const double mean = sum / n;
    const double std = std::sqrt(sq / n - mean * mean);
    const double want = 1.0 / std::sqrt(64.0);
    REQUIRE(std > want * 0.9);
    REQUIRE(std < want * 1.1);
}

TEST_CASE("config validation catches head mismatch", "[backbone]") {
    BackboneConfig cfg = tiny_config();
    cfg.n_heads = 3;
    REQUIRE_THROWS_WITH(cfg.validate(), ContainsSubstring("divisible"));
    cfg = tiny_config();
    cfg.vocab_size = 0;
    REQUIRE_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("embed_image produces one embedding per patch", "[backbone]") {
    const BackboneConfig cfg = tiny_config();
    const ParameterStore store = init_backbone_params(cfg, 1);
    {
        Graph g;
        ModelGraph m{g, store, cfg};
        const int e = embed_image(m, noise_image(32, 32, 1), "backbone.vis.");
        REQUIRE(g.value(e).rows == 16);
        REQUIRE(g.value(e).cols == cfg.d_model);
    }
    {
        BackboneConfig big = tiny_config();
        big.patch_size = 16;
        big.max_image_patches = 576;
        const ParameterStore bs = init_backbone_params(big, 1);
        Graph g;
        ModelGraph m{g, bs, big};
        const int e = embed_image(m, Image(384, 384), "backbone.vis.");
        REQUIRE(g.value(e).rows == 576);
    }
    {
        Graph g;
        ModelGraph m{g, store, cfg};
        REQUIRE_THROWS_AS(embed_image(m, noise_image(60, 64, 2), "backbone.vis."), Error);
    }
}

TEST_CASE("teacher-forced logits are causal in the target", "[backbone][property]") {
    const BackboneConfig cfg = tiny_config();
    const ParameterStore store = init_backbone_params(cfg, 11);
    Rng rng(5);
    for (int round = 0; round < 5; ++round) {
        const Image img = noise_image(16, 16, rng.next_u64());
        std::vector<int> instr, target;
        for (int i = 0; i < 4; ++i) instr.push_back(3 + static_cast<int>(rng.next_below(10)));
        for (int i = 0; i < 6; ++i) target.push_back(3 + static_cast<int>(rng.next_below(10)));

        Graph g1;
        ModelGraph m1{g1, store, cfg};
        const ForwardResult r1 = backbone_query_loss(m1, img, instr, target);

        const int j = 2 + static_cast<int>(rng.next_below(3));  // perturb target[j]
        std::vector<int> target2 = target;
        target2[j] = (target2[j] + 1 - 3) % 10 + 3;
        Graph g2;
        ModelGraph m2{g2, store, cfg};
        const ForwardResult r2 = backbone_query_loss(m2, img, instr, target2);

        const Tensor& L1 = g1.value(r1.logits);
        const Tensor& L2 = g2.value(r2.logits);
        // decoder input row j+1 carries target[j]; rows 0..j see only
        // unchanged inputs under the causal mask
        for (int row = 0; row <= j; ++row)
            for (int c = 0; c < L1.cols; ++c)
                REQUIRE_THAT(L2.at(row, c), WithinAbs(L1.at(row, c), 1e-9));
        bool later_changed = false;
        for (int row = j + 1; row < L1.rows && !later_changed; ++row)
            for (int c = 0; c < L1.cols; ++c)
                if (std::abs(L2.at(row, c) - L1.at(row, c)) > 1e-12) later_changed = true;
        REQUIRE(later_changed);
    }
}

TEST_CASE("zero-layer decoder is an exact linear readout", "[backbone]") {
    BackboneConfig cfg = tiny_config();
    cfg.enc_layers = 0;
    cfg.dec_layers = 0;
    const ParameterStore store = init_backbone_params(cfg, 2);
    Graph g;
    ModelGraph m{g, store, cfg};
    const std::vector<int> dec_input{0, 5, 9};
    const int memory = encode_source(m, query_source_embeddings(m, noise_image(8, 8, 3), {4}));
    const int logits = decode_logits(m, memory, dec_input);

    const Tensor& tok = store.value("backbone.tok_emb");
    const Tensor& pos = store.value("backbone.dec_pos_emb");
    const Tensor& L = g.value(logits);
    REQUIRE(g.value(memory).rows == 2);  // 1 patch + 1 instruction token
    for (size_t i = 0; i < dec_input.size(); ++i)
        for (int v = 0; v < cfg.vocab_size; ++v) {
            double dot = 0;
            for (int d = 0; d < cfg.d_model; ++d)
                dot += (tok.at(dec_input[i], d) + pos.at(static_cast<int>(i), d)) * tok.at(v, d);
            REQUIRE_THAT(L.at(static_cast<int>(i), v), WithinRel(dot, 1e-12));
        }
}

TEST_CASE("identical inputs give bit-identical forwards", "[backbone][determinism]") {
    const BackboneConfig cfg = tiny_config();
    const ParameterStore store = init_backbone_params(cfg, 13);
    const Image img = noise_image(16, 16, 4);
    const std::vector<int> instr{3, 4, 5};
    const std::vector<int> target{6, 7};
    auto run = [&]() {
        Graph g;
        ModelGraph m{g, store, cfg};
        const ForwardResult r = backbone_query_loss(m, img, instr, target);
        return g.scalar_value(r.loss);
    };
    const double a = run();
    const double b = run();
    REQUIRE(std::memcmp(&a, &b, sizeof a) == 0);
}

TEST_CASE("loss_nll analytic cases", "[backbone]") {
    const BackboneConfig cfg = tiny_config();
    const ParameterStore store = init_backbone_params(cfg, 1);
    {
        Graph g;
        ModelGraph m{g, store, cfg};
        const int logits = g.input(Tensor::zeros(3, 23));  // uniform
        const int loss = loss_nll(m, logits, {1, 2, 3}, {});
        REQUIRE_THAT(g.scalar_value(loss), WithinRel(std::log(23.0), 1e-12));
    }
    {
        Graph g;
        ModelGraph m{g, store, cfg};
        Tensor t = Tensor::zeros(2, 23);
        t.at(0, 4) = 20.0;
        t.at(1, 9) = 20.0;
        const int loss = loss_nll(m, g.input(t), {4, 9}, {});
        REQUIRE(g.scalar_value(loss) < 1e-7);  // vocab 23 at margin 20
        REQUIRE(g.scalar_value(loss) > 0.0);
    }
    {
        // a pad-only suffix contributes nothing
        Graph g;
        ModelGraph m{g, store, cfg};
        Rng rng(6);
        Tensor base = Tensor::normal(3, 23, 1.0, rng);
        Tensor padded = Tensor::zeros(5, 23);
        padded.map().topRows(3) = base.map();
        const int l1 = loss_nll(m, g.input(base), {1, 2, 3}, {});
        const int l2 = loss_nll(m, g.input(padded), {1, 2, 3, 0, 0}, {1, 1, 1, 0, 0});
        REQUIRE(g.scalar_value(l1) == g.scalar_value(l2));
    }
    {
        Graph g;
        ModelGraph m{g, store, cfg};
        const int logits = g.input(Tensor::zeros(2, 23));
        REQUIRE_THROWS_WITH(loss_nll(m, logits, {1, 2}, {0, 0}), ContainsSubstring("masked"));
    }
}

TEST_CASE("backbone gradients match central differences on 20 random scalars",
          "[backbone][gradcheck]") {
    const BackboneConfig cfg = tiny_config();
    ParameterStore store = init_backbone_params(cfg, 21);
    const Image img = noise_image(16, 16, 9);
    const std::vector<int> instr{3, 7, 11};
    const std::vector<int> target{5, 14, 2};

    auto loss_value = [&]() {
        Graph g;
        ModelGraph m{g, store, cfg};
        return g.scalar_value(backbone_query_loss(m, img, instr, target).loss);
    };

    Graph g;
    ModelGraph m{g, store, cfg};
    const ForwardResult r = backbone_query_loss(m, img, instr, target);
    g.backward(r.loss);
    GradBuffer buf;
    g.add_param_grads(buf);

    Rng rng(33);
    int checked = 0;
    while (checked < 20) {
        const int pi = static_cast<int>(rng.next_below(store.count()));
        Tensor& t = store.value(pi);
        if (t.data.empty()) continue;
        const size_t ei = rng.next_below(t.data.size());
        const double keep = t.data[ei];
        const double eps = 1e-5;
        t.data[ei] = keep + eps;
        const double lp = loss_value();
        t.data[ei] = keep - eps;
        const double lm = loss_value();
        t.data[ei] = keep;
        const double fd = (lp - lm) / (2 * eps);
        const double an = (pi < static_cast<int>(buf.grads.size()) && !buf.grads[pi].data.empty())
                              ? buf.grads[pi].data[ei]
                              : 0.0;
        INFO("param " << store.name(pi) << " idx " << ei << " fd " << fd << " analytic " << an);
        if (std::abs(fd) < 1e-10) {
            REQUIRE_THAT(an, WithinAbs(0.0, 1e-7));
        } else {
            REQUIRE_THAT(an, WithinRel(fd, 1e-3) || WithinAbs(fd, 1e-8));
        }
        ++checked;
    }
}

TEST_CASE("sequence length limits are enforced", "[backbone]") {
    BackboneConfig cfg = tiny_config();
    cfg.max_positions = 10;
    const ParameterStore store = init_backbone_params(cfg, 1);
    Graph g;
    ModelGraph m{g, store, cfg};
    // 4 patches + 8 instruction tokens = 12 > 10
    REQUIRE_THROWS_WITH(
        encode_source(m, query_source_embeddings(m, noise_image(16, 16, 1),
                                                 {3, 4, 5, 6, 7, 8, 9, 10})),
        ContainsSubstring("max positions"));

    const BackboneConfig cfg2 = tiny_config();
    const ParameterStore store2 = init_backbone_params(cfg2, 1);
    Graph g2;
    ModelGraph m2{g2, store2, cfg2};
    const int mem = encode_source(m2, query_source_embeddings(m2, noise_image(16, 16, 1), {3}));
    std::vector<int> long_target(cfg2.max_target_positions + 1, 3);
    REQUIRE_THROWS_AS(decode_logits(m2, mem, long_target), Error);
}

TEST_CASE("dropout masks activations only when configured", "[backbone]") {
    BackboneConfig cfg = tiny_config();
    cfg.dropout = 0.5;
    const ParameterStore store = init_backbone_params(cfg, 17);
    const Image img = noise_image(16, 16, 8);
    auto run = [&](Rng* rng) {
        Graph g;
        ModelGraph m{g, store, cfg, rng};
        return g.scalar_value(backbone_query_loss(m, img, {3, 4}, {5, 6}).loss);
    };
    Rng r1(1), r2(2);
    const double with_a = run(&r1);
    const double with_b = run(&r2);
    const double without1 = run(nullptr);
    const double without2 = run(nullptr);
    REQUIRE(with_a != with_b);       // different masks, different loss
    REQUIRE(without1 == without2);   // inference path ignores dropout
}

TEST_CASE("checkpoint roundtrip preserves everything bit-exactly", "[checkpoint]") {
    namespace fs = std::filesystem;
    const BackboneConfig cfg = tiny_config();
    Checkpoint ck;
    ck.step = 41;
    ck.adam_t = 17;
    ck.config_snapshot = cfg.snapshot();
    ck.store = init_backbone_params(cfg, 29);
    ck.store.set_trainable_prefix("backbone.", false);
    Rng rng(3);
    ck.opt_m.emplace("backbone.tok_emb", Tensor::normal(23, 8, 0.1, rng));
    ck.opt_v.emplace("backbone.tok_emb", Tensor::normal(23, 8, 0.1, rng));

    const auto path = (fs::temp_directory_path() / "mixt_ckpt_test.bin").string();
    save_checkpoint(path, ck);
    const Checkpoint back = load_checkpoint(path);

    REQUIRE(back.step == 41);
    REQUIRE(back.adam_t == 17);
    REQUIRE(back.config_snapshot == cfg.snapshot());
    REQUIRE(back.store.checksum() == ck.store.checksum());
    REQUIRE(back.store.count() == ck.store.count());
    for (int i = 0; i < back.store.count(); ++i) {
        REQUIRE(back.store.name(i) == ck.store.name(i));
        REQUIRE(back.store.trainable(i) == ck.store.trainable(i));
    }
    REQUIRE(back.opt_m.at("backbone.tok_emb").data == ck.opt_m.at("backbone.tok_emb").data);
    REQUIRE(back.opt_v.at("backbone.tok_emb").data == ck.opt_v.at("backbone.tok_emb").data);
    fs::remove(path);
}

TEST_CASE("checkpoint corruption and format errors are detected", "[checkpoint]") {
    namespace fs = std::filesystem;
    const BackboneConfig cfg = tiny_config();
    Checkpoint ck;
    ck.config_snapshot = cfg.snapshot();
    ck.store = init_backbone_params(cfg, 5);
    const auto path = (fs::temp_directory_path() / "mixt_ckpt_bad.bin").string();
    save_checkpoint(path, ck);

    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(200);
        f.put('\x55');
    }
    REQUIRE_THROWS_WITH(load_checkpoint(path), ContainsSubstring("checksum"));

    {
        std::ofstream f(path, std::ios::binary);
        f << "NOTACKPTxxxxxxxxxxxxxxxxxxxx";
    }
    REQUIRE_THROWS_AS(load_checkpoint(path), Error);
    fs::remove(path);
    REQUIRE_THROWS_AS(load_checkpoint(path), Error);
}
