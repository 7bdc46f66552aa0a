#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

#include "rsdg/checkpoint.hpp"
#include "rsdg/nn.hpp"
#include "rsdg/rng.hpp"

using namespace rsdg;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double amp = 1.0) {
  Rng rng(seed);
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.v) v = amp * rng.normal();
  return t;
}

// Central finite differences against the analytic backward pass for a probe
// of parameter and input coordinates. Loss is a fixed random projection of
// the network output.
void check_gradients(Network& net, const Tensor& x, std::uint64_t seed, int n_param_probes = 24,
                     int n_input_probes = 12, double h = 1e-5, double tol = 1e-4) {
  const Tensor up = random_tensor(net.output_shape(), mix_seed(seed, 1));

  auto loss = [&]() {
    const Tensor y = net.forward(x);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.v.size(); ++i) acc += up.v[i] * y.v[i];
    return acc;
  };

  net.zero_grads();
  loss();
  const Tensor input_grad = net.backward(up);

  Rng pick(mix_seed(seed, 2));
  if (net.param_count() > 0) {
    for (int probe = 0; probe < n_param_probes; ++probe) {
      const std::size_t idx = pick.below(net.params().size());
      const double keep = net.params()[idx];
      net.params()[idx] = keep + h;
      const double lp = loss();
      net.params()[idx] = keep - h;
      const double lm = loss();
      net.params()[idx] = keep;
      const double fd = (lp - lm) / (2.0 * h);
      INFO("param " << idx << " fd=" << fd << " an=" << net.grads()[idx]);
      REQUIRE(std::abs(fd - net.grads()[idx]) <= tol * std::max(1.0, std::abs(fd)));
    }
  }
  Tensor xp = x;
  for (int probe = 0; probe < n_input_probes; ++probe) {
    const std::size_t idx = pick.below(x.v.size());
    const double keep = xp.v[idx];
    xp.v[idx] = keep + h;
    net.forward(xp);
    double lp = 0.0;
    {
      const Tensor y = net.forward(xp);
      for (std::size_t i = 0; i < y.v.size(); ++i) lp += up.v[i] * y.v[i];
    }
    xp.v[idx] = keep - h;
    double lm = 0.0;
    {
      const Tensor y = net.forward(xp);
      for (std::size_t i = 0; i < y.v.size(); ++i) lm += up.v[i] * y.v[i];
    }
    xp.v[idx] = keep;
    const double fd = (lp - lm) / (2.0 * h);
    INFO("input " << idx << " fd=" << fd << " an=" << input_grad.v[idx]);
    REQUIRE(std::abs(fd - input_grad.v[idx]) <= tol * std::max(1.0, std::abs(fd)));
  }
}

Network single_layer_net(LayerPtr layer, Shape in, std::uint64_t seed) {
  std::vector<LayerPtr> layers;
  layers.push_back(std::move(layer));
  return Network(std::move(in), std::move(layers), seed);
}

}  // namespace

TEST_CASE("dense layer gradients match finite differences") {
  auto plain = single_layer_net(std::make_unique<DenseLayer>(7, 5, false), {7}, 11);
  check_gradients(plain, random_tensor({7}, 100), 0xd1);
  auto wn = single_layer_net(std::make_unique<DenseLayer>(7, 5, true), {7}, 12);
  check_gradients(wn, random_tensor({7}, 101), 0xd2);
}

TEST_CASE("conv2d gradients match finite differences for odd and even kernels") {
  auto k3 = single_layer_net(std::make_unique<Conv2dLayer>(2, 3, 3, false), {2, 6, 5}, 21);
  check_gradients(k3, random_tensor({2, 6, 5}, 102), 0xc1);
  auto k4 = single_layer_net(std::make_unique<Conv2dLayer>(2, 2, 4, true), {2, 5, 6}, 22);
  check_gradients(k4, random_tensor({2, 5, 6}, 103), 0xc2);
}

TEST_CASE("tanh and softmax gradients match finite differences") {
  std::vector<LayerPtr> layers;
  layers.push_back(std::make_unique<DenseLayer>(6, 6, false));
  layers.push_back(std::make_unique<TanhLayer>());
  layers.push_back(std::make_unique<DenseLayer>(6, 4, false));
  layers.push_back(std::make_unique<SoftmaxLayer>());
  Network net({6}, std::move(layers), 31);
  check_gradients(net, random_tensor({6}, 104), 0xe1);
}

TEST_CASE("residual block gradients match finite differences") {
  auto same = single_layer_net(std::make_unique<ResidualBlock>(2, 2, 4), {2, 5, 5}, 41);
  check_gradients(same, random_tensor({2, 5, 5}, 105), 0xf1);
  auto grow = single_layer_net(std::make_unique<ResidualBlock>(1, 2, 4), {1, 5, 5}, 42);
  check_gradients(grow, random_tensor({1, 5, 5}, 106), 0xf2);
}

TEST_CASE("non-local block gradients match finite differences") {
  auto same = single_layer_net(std::make_unique<NonLocalBlock>(2, 2, 2), {2, 4, 3}, 51);
  check_gradients(same, random_tensor({2, 4, 3}, 107, 0.5), 0xa1);
  auto reduce = single_layer_net(std::make_unique<NonLocalBlock>(2, 1, 1), {2, 3, 4}, 52);
  check_gradients(reduce, random_tensor({2, 3, 4}, 108, 0.5), 0xa2);
}

TEST_CASE("generator and discriminator gradients match finite differences") {
  GenSpec gs{5, 8, 8};
  Network gen = build_generator(gs, 61);
  check_gradients(gen, random_tensor({5}, 109, 0.5), 0xb1, 16, 5);

  DiscSpec ds{8, 8};
  Network disc = build_discriminator(ds, 62);
  check_gradients(disc, random_tensor({1, 8, 8}, 110, 0.5), 0xb2, 16, 8);
}

TEST_CASE("dense identity passes input through") {
  auto net = single_layer_net(std::make_unique<DenseLayer>(4, 4, false), {4}, 71);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) net.params()[i * 4 + j] = (i == j) ? 1.0 : 0.0;
  for (int i = 0; i < 4; ++i) net.params()[16 + i] = 0.0;
  const Tensor x = random_tensor({4}, 111);
  const Tensor y = net.forward(x);
  for (int i = 0; i < 4; ++i) REQUIRE(y.v[i] == Catch::Approx(x.v[i]).margin(1e-15));
}

TEST_CASE("conv2d delta kernel is the identity under same padding") {
  auto net = single_layer_net(std::make_unique<Conv2dLayer>(1, 1, 3, false), {1, 5, 7}, 72);
  for (double& p : net.params()) p = 0.0;
  net.params()[1 * 3 + 1] = 1.0;  // kernel center for pad (k-1)/2 = 1
  const Tensor x = random_tensor({1, 5, 7}, 112);
  const Tensor y = net.forward(x);
  for (std::size_t i = 0; i < x.v.size(); ++i) REQUIRE(y.v[i] == Catch::Approx(x.v[i]).margin(1e-15));
}

TEST_CASE("softmax output sums to one") {
  std::vector<LayerPtr> layers;
  layers.push_back(std::make_unique<SoftmaxLayer>());
  Network net({9}, std::move(layers), 73);
  const Tensor y = net.forward(random_tensor({9}, 113, 3.0));
  double sum = 0.0;
  for (double v : y.v) sum += v;
  REQUIRE(std::abs(sum - 1.0) < 1e-9);
}

TEST_CASE("all-zero network has zero input gradient") {
  auto net = single_layer_net(std::make_unique<DenseLayer>(5, 3, false), {5}, 74);
  for (double& p : net.params()) p = 0.0;
  net.forward(random_tensor({5}, 114));
  net.zero_grads();
  const Tensor up = random_tensor({3}, 115);
  const Tensor din = net.backward(up);
  for (double v : din.v) REQUIRE(v == 0.0);
}

TEST_CASE("backward is linear in the upstream gradient") {
  std::vector<LayerPtr> layers;
  layers.push_back(std::make_unique<DenseLayer>(6, 5, true));
  layers.push_back(std::make_unique<TanhLayer>());
  layers.push_back(std::make_unique<DenseLayer>(5, 3, false));
  Network net({6}, std::move(layers), 75);
  const Tensor x = random_tensor({6}, 116);
  const Tensor u1 = random_tensor({3}, 117);
  const Tensor u2 = random_tensor({3}, 118);
  Tensor usum = u1;
  for (std::size_t i = 0; i < usum.v.size(); ++i) usum.v[i] += u2.v[i];

  net.forward(x);
  const Tensor d1 = net.backward(u1);
  const Tensor d2 = net.backward(u2);
  const Tensor ds = net.backward(usum);
  for (std::size_t i = 0; i < ds.v.size(); ++i)
    REQUIRE(std::abs(ds.v[i] - (d1.v[i] + d2.v[i])) < 1e-9);
}

TEST_CASE("backward before forward is rejected") {
  auto net = single_layer_net(std::make_unique<DenseLayer>(3, 2, false), {3}, 76);
  REQUIRE_THROWS_WITH(net.backward(random_tensor({2}, 119)),
                      Catch::Matchers::ContainsSubstring("backward before forward"));
}

TEST_CASE("generator construction is deterministic and tanh-bounded") {
  GenSpec gs{6, 8, 8};
  Network g1 = build_generator(gs, 402);
  Network g2 = build_generator(gs, 402);
  REQUIRE(g1.params() == g2.params());

  const Tensor z = Tensor::zeros({6});
  const Tensor out = g1.forward(z);
  REQUIRE(out.shape == Shape{1, 8, 8});
  for (double v : out.v) {
    REQUIRE(std::isfinite(v));
    REQUIRE(std::abs(v) < 1.0);
  }
}

TEST_CASE("orthogonal init yields orthonormal weight grams") {
  GenSpec gs{6, 8, 8};
  Network gen = build_generator(gs, 403);
  // Layer 0 is the weight-normalized latent dense: v is (16*64) x 6, so the
  // 6 columns must be orthonormal.
  const auto p0 = gen.param_slice(0);
  const int out0 = 16 * 8 * 8, in0 = 6;
  double err = 0.0;
  for (int a = 0; a < in0; ++a)
    for (int b = 0; b < in0; ++b) {
      double dot = 0.0;
      for (int r = 0; r < out0; ++r) dot += p0[r * in0 + a] * p0[r * in0 + b];
      const double want = (a == b) ? 1.0 : 0.0;
      err += (dot - want) * (dot - want);
    }
  REQUIRE(std::sqrt(err) < 1e-5);

  // A 16->16 4x4 conv inside the first residual block: rows (filters) of the
  // flattened 16 x 256 matrix must be orthonormal.
  const auto p3 = gen.param_slice(3);
  const int fan = 16 * 4 * 4;
  err = 0.0;
  for (int a = 0; a < 16; ++a)
    for (int b = 0; b < 16; ++b) {
      double dot = 0.0;
      for (int k = 0; k < fan; ++k) dot += p3[a * fan + k] * p3[b * fan + k];
      const double want = (a == b) ? 1.0 : 0.0;
      err += (dot - want) * (dot - want);
    }
  REQUIRE(std::sqrt(err) < 1e-5);
}

TEST_CASE("discriminator logit is finite and parameter count matches the plan") {
  DiscSpec ds{8, 8};
  Network disc = build_discriminator(ds, 404);

  auto conv_wn = [](int in_ch, int out_ch, int k) { return out_ch * in_ch * k * k + 2 * out_ch; };
  // residual(in,out,k) = conv(in,out,k) + conv(out,out,k) (+ 1x1 shortcut when in != out)
  const int res1 = conv_wn(1, 2, 4) + conv_wn(2, 2, 4) + conv_wn(1, 2, 1);
  const int res2 = conv_wn(2, 2, 4) + conv_wn(2, 2, 4);
  const int convs = conv_wn(2, 1, 3) + conv_wn(1, 1, 3);
  const int logit = 64 * 1 + 2 * 1;
  REQUIRE(disc.param_count() == res1 + res2 + convs + logit);

  const Tensor zero = Tensor::zeros({1, 8, 8});
  const Tensor y0 = disc.forward(zero);
  REQUIRE(y0.v.size() == 1);
  REQUIRE(std::isfinite(y0.v[0]));

  Tensor big = random_tensor({1, 8, 8}, 120);
  for (double& v : big.v) v *= 2.0;
  const Tensor yb = disc.forward(big);
  REQUIRE(std::isfinite(yb.v[0]));
}

TEST_CASE("non-local block with uniform attention adds the channel mean") {
  auto net = single_layer_net(std::make_unique<NonLocalBlock>(2, 2, 2), {2, 3, 3}, 77);
  // Parameter layout: theta, phi, g, out projections (all 1x1 WN convs of
  // 2->2: v=4, g=2, b=2 each). Zero theta's scales for uniform attention and
  // make g/out identity maps.
  auto p = net.params();
  std::fill(p.begin(), p.end(), 0.0);
  auto set_identity = [&](int base) {
    p[base + 0] = 1.0;  // v row 0 = e0
    p[base + 3] = 1.0;  // v row 1 = e1
    p[base + 4] = 1.0;  // g
    p[base + 5] = 1.0;
  };
  // theta at 0, phi at 8, g at 16, out at 24; theta/phi scales stay zero.
  set_identity(16);
  set_identity(24);
  net.params() = p;

  const Tensor x = random_tensor({2, 3, 3}, 121);
  const Tensor y = net.forward(x);
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (int i = 0; i < 9; ++i) mean += x.v[c * 9 + i];
    mean /= 9.0;
    for (int i = 0; i < 9; ++i)
      REQUIRE(y.v[c * 9 + i] == Catch::Approx(x.v[c * 9 + i] + mean).margin(1e-12));
  }
}

TEST_CASE("adam basics and the first-step recurrence") {
  std::vector<double> params = {0.0};
  std::vector<double> grads = {0.0};
  AdamState st;
  adam_step(params, grads, st, 0.1);
  REQUIRE(params[0] == 0.0);

  params = {0.0};
  grads = {1.0};
  st = AdamState{};
  adam_step(params, grads, st, 0.1);
  // Hand recurrence: m=0.1/0.1=1, v=0.001/0.001=1 after bias correction.
  const double expected = -0.1 * 1.0 / (std::sqrt(1.0) + 1e-8);
  REQUIRE(params[0] == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("weight norm directions have unit norm after renormalization") {
  std::vector<LayerPtr> layers;
  layers.push_back(std::make_unique<DenseLayer>(6, 4, true));
  layers.push_back(std::make_unique<TanhLayer>());
  layers.push_back(std::make_unique<DenseLayer>(4, 1, true));
  Network net({6}, std::move(layers), 78);

  AdamState st;
  Rng rng(122);
  for (int step = 0; step < 5; ++step) {
    net.zero_grads();
    net.forward(random_tensor({6}, 123 + step));
    Tensor up = Tensor::zeros({1});
    up.v[0] = rng.normal();
    net.backward(up);
    adam_step(net.params(), net.grads(), st, 0.05);
    net.renormalize_weight_norm();
  }

  const Tensor probe = random_tensor({6}, 130);
  const Tensor before = net.forward(probe);
  // Direction rows of the first dense layer: 4 rows of length 6.
  for (int u = 0; u < 4; ++u) {
    double n = 0.0;
    for (int k = 0; k < 6; ++k) n += net.params()[u * 6 + k] * net.params()[u * 6 + k];
    REQUIRE(std::abs(std::sqrt(n) - 1.0) < 1e-6);
  }
  // Renormalization must not change the function.
  net.renormalize_weight_norm();
  const Tensor after = net.forward(probe);
  REQUIRE(after.v[0] == Catch::Approx(before.v[0]).margin(1e-12));
}

TEST_CASE("checkpoint round trip is bit exact including adam state") {
  const std::string dir = std::filesystem::temp_directory_path() / "rsdg_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/net.ckpt";

  GenSpec gs{4, 8, 8};
  Network net = build_generator(gs, 405);
  AdamState st;
  net.zero_grads();
  net.forward(random_tensor({4}, 131));
  net.backward(random_tensor({1, 8, 8}, 132));
  adam_step(net.params(), net.grads(), st, 0.01);

  save_checkpoint(path, net, &st);

  Network loaded = build_generator(gs, 999);
  AdamState st2;
  load_checkpoint(path, loaded, &st2);
  REQUIRE(loaded.params() == net.params());
  REQUIRE(st2.t == st.t);
  REQUIRE(st2.m == st.m);
  REQUIRE(st2.v == st.v);

  DiscSpec ds{8, 8};
  Network other = build_discriminator(ds, 1);
  REQUIRE_THROWS_AS(load_checkpoint(path, other), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("shape-chain mismatch raises a construction error naming the layer") {
  std::vector<LayerPtr> layers;
  layers.push_back(std::make_unique<DenseLayer>(4, 5, false));
  layers.push_back(std::make_unique<DenseLayer>(6, 2, false));
  REQUIRE_THROWS_WITH(Network({4}, std::move(layers), 1),
                      Catch::Matchers::ContainsSubstring("layer 1"));
}
