#include <doctest.h>

#include "ditic/layers.hpp"
#include "ditic/optim.hpp"

using namespace ditic;

TEST_CASE("lr schedule halves at the declared fractions") {
  LrSchedule s;
  const int64_t total = 1000;
  CHECK(lr_schedule(0, total, s) == doctest::Approx(1e-4));
  CHECK(lr_schedule(499, total, s) == doctest::Approx(1e-4));
  CHECK(lr_schedule(500, total, s) == doctest::Approx(5e-5));
  CHECK(lr_schedule(799, total, s) == doctest::Approx(5e-5));
  CHECK(lr_schedule(800, total, s) == doctest::Approx(2.5e-5));
  CHECK(lr_schedule(901, total, s) == doctest::Approx(1.25e-5));
  CHECK(lr_schedule(999, total, s) == doctest::Approx(1.25e-5));
}

TEST_CASE("ema update: fixed point, decay extremes, analytic step") {
  ParamStore<double> store;
  Rng rng(1);
  int h = store.add("w", Tensor<double>::randn({4}, rng));
  EmaShadow<double> ema;
  ema.init_from(store);

  // shadow == live is an exact fixed point.
  ema.update(store, 0.999);
  for (int i = 0; i < 4; ++i) CHECK(ema.values().at("w")[i] == store.value(h)[i]);

  // decay = 0 copies live exactly.
  store.set_value(h, Tensor<double>::randn({4}, rng));
  ema.update(store, 0.0);
  for (int i = 0; i < 4; ++i) CHECK(ema.values().at("w")[i] == store.value(h)[i]);

  // shadow = 0, live = 1, one step at 0.999 -> 0.001.
  ParamStore<double> s2;
  int h2 = s2.add("p", Tensor<double>({1}));
  EmaShadow<double> e2;
  e2.init_from(s2);
  s2.set_value(h2, Tensor<double>::full({1}, 1.0));
  e2.update(s2, 0.999);
  CHECK(e2.values().at("p")[0] == doctest::Approx(0.001).epsilon(1e-9));

  // Tree mismatch errors.
  s2.add("extra", Tensor<double>({1}));
  CHECK_THROWS_AS(e2.update(s2, 0.999), TensorError);
}

TEST_CASE("adamw descends a quadratic and respects freeze/decay flags") {
  ParamStore<double> store;
  int hw = store.add("layer.w", Tensor<double>::full({2}, 3.0));          // decays
  int hb = store.add("layer.b", Tensor<double>::full({2}, 3.0), false);   // no decay
  int hf = store.add("frozen.w", Tensor<double>::full({2}, 3.0));
  store.set_trainable_prefix("frozen.", false);

  AdamW<double> opt;
  double last = 1e300;
  for (int it = 0; it < 200; ++it) {
    Tape<double> tape;
    ForwardCtx<double> ctx(store, &tape);
    Tensor<double> loss = sum(square(ctx.p(hw)));
    loss = add(loss, sum(square(ctx.p(hb))));
    loss = add(loss, sum(square(ctx.p(hf))));
    tape.backward(loss);
    const double v = loss.item();
    if (it > 0) CHECK(v <= last + 1e-12);
    last = v;
    std::unordered_map<int, Tensor<double>> grads = ctx.collect_grads();
    opt.step(store, grads, 1e-2);
  }
  CHECK(std::fabs(store.value(hw)[0]) < 1.0);
  CHECK(std::fabs(store.value(hb)[0]) < 1.0);
  // Frozen parameter is untouched bit-for-bit.
  CHECK(store.value(hf)[0] == 3.0);
}

TEST_CASE("lora: exact identity at attach, adapters learn, base frozen") {
  ParamStore<float> store;
  Rng rng(7);
  Linear<float> lin(store, "dit.block0.attn.wq", 6, 4, rng);
  Tensor<float> x = Tensor<float>::rand_uniform({3, 6}, rng, -1.0f, 1.0f);

  ForwardCtx<float> before(store, nullptr);
  Tensor<float> base_out = lin.forward(before, x);

  LoraSlot slot = lora_attach(store, "dit.block0.attn.wq.w", 2, rng);
  CHECK_FALSE(store.entry(slot.base).trainable);
  CHECK_THROWS_AS(lora_attach(store, "dit.block0.attn.wq.w", 0, rng), TensorError);
  CHECK_THROWS_AS(lora_attach(store, "nope.w", 2, rng), TensorError);

  ForwardCtx<float> after(store, nullptr);
  after.attach_lora(slot);
  Tensor<float> adapted_out = lin.forward(after, x);
  for (int64_t i = 0; i < base_out.size(); ++i) REQUIRE(adapted_out[i] == base_out[i]);

  // Gradients reach A and B only; the base weight stays zero-gradient.
  Tape<float> tape;
  ForwardCtx<float> ctx(store, &tape);
  ctx.attach_lora(slot);
  tape.backward(sum(square(lin.forward(ctx, x))));
  Tensor<float> gw = ctx.grad(slot.base);
  for (int64_t i = 0; i < gw.size(); ++i) CHECK(gw[i] == 0.0f);
  Tensor<float> ga = ctx.grad(slot.a);
  Tensor<float> gb = ctx.grad(slot.b);
  double ga_mag = 0, gb_mag = 0;
  for (int64_t i = 0; i < ga.size(); ++i) ga_mag += std::fabs(ga[i]);
  for (int64_t i = 0; i < gb.size(); ++i) gb_mag += std::fabs(gb[i]);
  // B is zero so dL/dA = 0 at attach; dL/dB is generically nonzero.
  CHECK(gb_mag > 1e-9);
  CHECK(ga_mag == 0.0);

  // The correction matrix B*A is rank <= r by construction.
  CHECK(store.value(slot.a).shape() == Shape{2, 6});
  CHECK(store.value(slot.b).shape() == Shape{4, 2});

  // Rank above min(d_in, d_out) is rejected.
  Linear<float> small(store, "small", 3, 2, rng);
  CHECK_THROWS_AS(lora_attach(store, "small.w", 3, rng), TensorError);
}
