#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "tamcl/synth.hpp"
#include "tamcl/trainer.hpp"

using namespace tamcl;

namespace {

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.backbone = BackboneConfig{1, 8, 2, 2, 2};
    cfg.img_h = 4;
    cfg.img_w = 4;
    cfg.img_c = 1;
    cfg.vocab = 16;
    cfg.max_text_len = 8;
    return cfg;
}

TaskSpec tiny_task(const std::string& name, std::size_t labels, std::uint64_t class_seed,
                   std::size_t train_n = 60, std::size_t test_n = 30) {
    TaskSpec spec;
    spec.name = name;
    spec.label_count = labels;
    spec.img_h = 4;
    spec.img_w = 4;
    spec.img_c = 1;
    spec.vocab = 16;
    spec.len_min = 2;
    spec.len_max = 5;
    spec.train_count = train_n;
    spec.test_count = test_n;
    spec.class_seed = class_seed;
    return spec;
}

TrainConfig quick_config(const std::string& method, std::size_t epochs = 1) {
    TrainConfig cfg;
    cfg.method = method;
    cfg.epochs = epochs;
    cfg.batch_size = 8;
    cfg.seed = 7;
    return cfg;
}

std::vector<PlannedTask> tiny_plan(std::size_t tasks, std::size_t train_n = 60,
                                   std::size_t test_n = 30) {
    std::vector<PlannedTask> plan;
    for (std::size_t i = 0; i < tasks; ++i) {
        TaskSpec spec = tiny_task("task" + std::to_string(i), 2 + i % 2, 100 + i, train_n, test_n);
        auto splits = generate_task(spec, 500 + i);
        plan.push_back(PlannedTask{spec.name, std::move(splits.train), std::move(splits.test)});
    }
    return plan;
}

}  // namespace

TEST_CASE("method flag sets") {
    MethodFlags tamcl_flags = flags_for_method("tamcl");
    CHECK(tamcl_flags.use_tab);
    CHECK(tamcl_flags.use_kd);
    CHECK(tamcl_flags.use_replay);
    CHECK(tamcl_flags.use_weighting);
    CHECK_FALSE(tamcl_flags.use_ewc);

    MethodFlags ft = flags_for_method("finetune");
    CHECK_FALSE(ft.use_tab);
    CHECK_FALSE(ft.use_kd);
    CHECK_FALSE(ft.use_replay);
    CHECK_FALSE(ft.use_ewc);

    MethodFlags er = flags_for_method("er");
    CHECK(er.use_replay);
    CHECK_FALSE(er.use_tab);

    MethodFlags ewc = flags_for_method("ewc");
    CHECK(ewc.use_ewc);
    CHECK_FALSE(ewc.use_replay);

    CHECK_THROWS_AS(flags_for_method("dropout"), std::invalid_argument);

    TrainConfig ablated = quick_config("tamcl");
    ablated.disable_kd = true;
    CHECK_FALSE(ablated.flags().use_kd);
    CHECK(ablated.flags().use_tab);
    ablated.disable_tab = true;
    CHECK_FALSE(ablated.flags().use_tab);
}

TEST_CASE("first task optimizes pure cross-entropy") {
    auto plan = tiny_plan(1);
    Trainer trainer(tiny_model(), quick_config("tamcl"));
    trainer.begin_task(plan[0].name, 2, false);
    for (int step = 0; step < 3; ++step) {
        std::vector<Sample> batch(plan[0].train.samples.begin(),
                                  plan[0].train.samples.begin() + 8);
        LossBreakdown b = trainer.train_step(batch, 0);
        CHECK(b.total == b.c);
        CHECK(b.lambda == 0.0);
        CHECK(b.beta == 0.0);
        CHECK(b.ikd == 0.0);
        CHECK(b.div == 0.0);
    }
}

TEST_CASE("frozen task parameters stay byte-identical across steps") {
    auto plan = tiny_plan(2);
    Trainer trainer(tiny_model(), quick_config("tamcl"));
    trainer.begin_task(plan[0].name, plan[0].train.spec.label_count, false);
    trainer.train_task(plan[0].train);
    trainer.finish_task();
    trainer.buffer().store_task_samples(0, plan[0].train);

    trainer.begin_task(plan[1].name, plan[1].train.spec.label_count, false);
    auto token0 = trainer.model().params().get("task0.token").tensor.values();
    auto head0_w = trainer.model().params().get("task0.head.weight").tensor.values();
    auto head0_b = trainer.model().params().get("task0.head.bias").tensor.values();
    trainer.train_task(plan[1].train);
    CHECK(trainer.model().params().get("task0.token").tensor.values() == token0);
    CHECK(trainer.model().params().get("task0.head.weight").tensor.values() == head0_w);
    CHECK(trainer.model().params().get("task0.head.bias").tensor.values() == head0_b);
    // the shared backbone did move
    CHECK(trainer.model().params().get("backbone.img.proj").tensor.values() !=
          std::vector<double>(trainer.teacher()->model->params().get("backbone.img.proj").tensor.values()));
}

TEST_CASE("teacher distillation activates from the second task") {
    auto plan = tiny_plan(2);
    Trainer trainer(tiny_model(), quick_config("tamcl"));
    trainer.begin_task(plan[0].name, plan[0].train.spec.label_count, false);
    CHECK_FALSE(trainer.teacher().has_value());
    trainer.train_task(plan[0].train);
    trainer.finish_task();

    trainer.begin_task(plan[1].name, plan[1].train.spec.label_count, false);
    REQUIRE(trainer.teacher().has_value());
    std::vector<Sample> batch(plan[1].train.samples.begin(), plan[1].train.samples.begin() + 8);
    LossBreakdown first = trainer.train_step(batch, 1);
    CHECK(first.lambda == Catch::Approx(0.5).margin(1e-15));
    // student still equals the teacher before any update lands
    CHECK(first.ikd == 0.0);
    CHECK(first.div > 0.0);
    LossBreakdown second = trainer.train_step(batch, 1);
    CHECK(second.ikd > 0.0);
}

TEST_CASE("diversity cap invariant holds on every logged step") {
    auto plan = tiny_plan(3);
    TrainConfig cfg = quick_config("tamcl");
    cfg.replay.replay_freq = 4;
    auto result = run_sequence(tiny_model(), cfg, plan);
    std::size_t checked = 0;
    for (const auto& curve : result.curves) {
        for (const auto& rec : curve) {
            double base = (1.0 - rec.lambda) * rec.c + rec.lambda * rec.alpha * rec.ikd;
            CHECK(rec.beta * rec.div <= 0.1 * base + 1e-12);
            ++checked;
        }
    }
    CHECK(checked > 0);
}

TEST_CASE("replay cadence and curve bookkeeping") {
    // 500 samples at batch 2 give 250 steps per epoch; with f=100 exactly two
    // replay steps fire per epoch once the buffer is non-empty
    auto plan = tiny_plan(2, 500, 10);
    TrainConfig cfg = quick_config("tamcl");
    cfg.batch_size = 2;
    Trainer trainer(tiny_model(), cfg);
    trainer.begin_task(plan[0].name, plan[0].train.spec.label_count, false);
    auto curve0 = trainer.train_task(plan[0].train);
    trainer.finish_task();
    // empty buffer: no replay records even though the cadence fires
    CHECK(curve0.size() == 250);
    trainer.buffer().store_task_samples(0, plan[0].train);
    CHECK(trainer.buffer().store(0).size() == 5);

    trainer.begin_task(plan[1].name, plan[1].train.spec.label_count, false);
    auto curve1 = trainer.train_task(plan[1].train);
    std::size_t replayed = 0;
    for (const auto& rec : curve1)
        if (rec.replay) ++replayed;
    CHECK(curve1.size() == 252);
    CHECK(replayed == 2);
}

TEST_CASE("curve length is epochs times steps plus replay steps") {
    auto plan = tiny_plan(2, 40, 10);
    TrainConfig cfg = quick_config("tamcl", 2);
    cfg.replay.replay_freq = 2;
    Trainer trainer(tiny_model(), cfg);
    trainer.begin_task(plan[0].name, plan[0].train.spec.label_count, false);
    trainer.train_task(plan[0].train);
    trainer.finish_task();
    trainer.buffer().store_task_samples(0, plan[0].train);
    trainer.begin_task(plan[1].name, plan[1].train.spec.label_count, false);
    auto curve = trainer.train_task(plan[1].train);
    // 40/8 = 5 steps, floor(5/2) = 2 replays, 2 epochs -> 14 records
    CHECK(curve.size() == 14);
}

TEST_CASE("replay steps run the replayed task's head without breaking freezing") {
    auto plan = tiny_plan(2, 40, 10);
    TrainConfig cfg = quick_config("tamcl");
    cfg.replay.replay_freq = 1;
    Trainer trainer(tiny_model(), cfg);
    trainer.begin_task(plan[0].name, plan[0].train.spec.label_count, false);
    trainer.train_task(plan[0].train);
    trainer.finish_task();
    trainer.buffer().store_task_samples(0, plan[0].train);
    trainer.begin_task(plan[1].name, plan[1].train.spec.label_count, false);
    auto head0 = trainer.model().params().get("task0.head.weight").tensor.values();
    auto curve = trainer.train_task(plan[1].train);
    std::size_t replayed = 0;
    for (const auto& rec : curve)
        if (rec.replay) ++replayed;
    CHECK(replayed == 5);  // every step at f=1
    CHECK(trainer.model().params().get("task0.head.weight").tensor.values() == head0);
}

TEST_CASE("training is deterministic under the seed") {
    auto plan = tiny_plan(2);
    TrainConfig cfg = quick_config("tamcl");
    auto a = run_sequence(tiny_model(), cfg, plan);
    auto b = run_sequence(tiny_model(), cfg, plan);
    CHECK(a.matrix.rows() == b.matrix.rows());
    REQUIRE(a.curves.size() == b.curves.size());
    for (std::size_t t = 0; t < a.curves.size(); ++t) {
        REQUIRE(a.curves[t].size() == b.curves[t].size());
        for (std::size_t s = 0; s < a.curves[t].size(); ++s)
            CHECK(a.curves[t][s].total == b.curves[t][s].total);
    }
    cfg.seed = 8;
    auto c = run_sequence(tiny_model(), cfg, plan);
    CHECK(a.curves[0][0].total != c.curves[0][0].total);
}

TEST_CASE("fisher estimate squares the cross-entropy gradient") {
    auto plan = tiny_plan(1, 10, 5);
    TrainConfig cfg = quick_config("ewc");
    Trainer trainer(tiny_model(), cfg);
    trainer.begin_task(plan[0].name, plan[0].train.spec.label_count, false);
    trainer.finish_task();

    Dataset one;
    one.spec = plan[0].train.spec;
    one.samples = {plan[0].train.samples[0]};
    FisherState state = trainer.fisher_estimate(one, 0);

    // recompute the single-sample gradient by hand
    trainer.model().params().zero_grad();
    ForwardResult fwd = trainer.model().forward(one.samples[0], 0);
    Tensor loss = cross_entropy_logits(
        fwd.logits, trainer.model().head(0).global_label(one.samples[0].label));
    backward(loss);
    for (const auto* p : trainer.model().params().trainable()) {
        REQUIRE(state.fisher.count(p->name) == 1);
        const auto& f = state.fisher.at(p->name);
        const auto& g = p->tensor.grad();
        for (std::size_t k = 0; k < f.size(); ++k) {
            CHECK(f[k] == Catch::Approx(g[k] * g[k]).margin(1e-14));
            CHECK(f[k] >= 0.0);
        }
        CHECK(state.anchor.at(p->name) == p->tensor.values());
    }
    CHECK_THROWS_AS(trainer.fisher_estimate(Dataset{}, 0), std::invalid_argument);
}

TEST_CASE("consolidation penalty grows quadratically from the anchor") {
    auto plan = tiny_plan(1, 20, 5);
    TrainConfig cfg = quick_config("ewc");
    Trainer trainer(tiny_model(), cfg);
    trainer.begin_task(plan[0].name, plan[0].train.spec.label_count, false);
    trainer.finish_task();
    trainer.push_fisher(trainer.fisher_estimate(plan[0].train, 0));

    CHECK(trainer.ewc_penalty().value() == 0.0);  // theta == anchor

    auto& proj = trainer.model().params().get("backbone.img.proj").tensor.mutable_values();
    auto orig = proj;
    for (double& v : proj) v += 0.1;
    double near = trainer.ewc_penalty().value();
    CHECK(near > 0.0);
    proj = orig;
    for (double& v : proj) v += 0.2;
    double far = trainer.ewc_penalty().value();
    CHECK(far == Catch::Approx(4.0 * near).epsilon(1e-9));
    proj = orig;
}

TEST_CASE("the penalty steers the ewc method's objective") {
    auto plan = tiny_plan(2, 40, 10);
    TrainConfig cfg = quick_config("ewc");
    Trainer trainer(tiny_model(), cfg);
    trainer.begin_task(plan[0].name, plan[0].train.spec.label_count, false);
    trainer.train_task(plan[0].train);
    trainer.finish_task();
    trainer.push_fisher(trainer.fisher_estimate(plan[0].train, 0));
    trainer.begin_task(plan[1].name, plan[1].train.spec.label_count, false);
    std::vector<Sample> batch(plan[1].train.samples.begin(), plan[1].train.samples.begin() + 8);
    // steps move theta off the anchor, so the quadratic term becomes positive
    trainer.train_step(batch, 1);
    LossBreakdown b = trainer.train_step(batch, 1);
    CHECK(b.total > b.c);
}

TEST_CASE("baseline methods carry no tokens and no teacher") {
    auto plan = tiny_plan(2, 40, 10);
    for (const std::string& method : {"finetune", "er", "ewc"}) {
        TrainConfig cfg = quick_config(method);
        cfg.replay.replay_freq = 2;
        Trainer trainer(tiny_model(), cfg);
        trainer.begin_task(plan[0].name, plan[0].train.spec.label_count, false);
        trainer.train_task(plan[0].train);
        trainer.finish_task();
        if (trainer.flags().use_replay) trainer.buffer().store_task_samples(0, plan[0].train);
        trainer.begin_task(plan[1].name, plan[1].train.spec.label_count, false);
        CHECK_FALSE(trainer.teacher().has_value());
        CHECK_FALSE(trainer.model().params().contains("task0.token"));
        auto curve = trainer.train_task(plan[1].train);
        for (const auto& rec : curve) {
            CHECK(rec.lambda == 0.0);
            CHECK(rec.beta == 0.0);
        }
        std::size_t replayed = 0;
        for (const auto& rec : curve)
            if (rec.replay) ++replayed;
        if (method == "er")
            CHECK(replayed > 0);
        else
            CHECK(replayed == 0);
        trainer.finish_task();
    }
}

TEST_CASE("run_sequence produces a triangular matrix and report") {
    auto plan = tiny_plan(2, 40, 16);
    TrainConfig cfg = quick_config("finetune");
    SequenceResult result = run_sequence(tiny_model(), cfg, plan);
    REQUIRE(result.matrix.task_count() == 2);
    CHECK(result.matrix.rows()[0].size() == 1);
    CHECK(result.matrix.rows()[1].size() == 2);
    CHECK(result.forgetting.entries.size() == 1);
    CHECK(result.task_names == std::vector<std::string>{"task0", "task1"});
    CHECK(result.curves.size() == 2);
    CHECK_THROWS_AS(run_sequence(tiny_model(), cfg, {}), std::invalid_argument);
}

TEST_CASE("training decreases the objective on one task") {
    TaskSpec spec = tiny_task("learn", 2, 321, 160, 40);
    auto splits = generate_task(spec, 99);
    TrainConfig cfg = quick_config("tamcl", 3);
    Trainer trainer(tiny_model(), cfg);
    trainer.begin_task(spec.name, 2, false);
    auto curve = trainer.train_task(splits.train);
    double first = curve.front().total;
    double tail = 0.0;
    for (std::size_t i = curve.size() - 5; i < curve.size(); ++i) tail += curve[i].total;
    tail /= 5.0;
    CHECK(tail < first);
    trainer.finish_task();
    double acc = trainer.evaluate(splits.test, 0);
    CHECK(acc > 0.5);  // above chance on a learnable task
}
