#include <filesystem>

#include "dil/net.hpp"
#include "dil/optim.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace dil;
using dil::test::random_tensor;

TEST_CASE("net: parameter count of the default configuration") {
  // (3*16*9 + 16) + (16*16*9 + 16) + (16*3*9 + 3)
  CHECK(NetConfig{}.parameter_count() == 3203);
  CHECK(RestorationNet::init(NetConfig{}, 1).params().size() == 3203);
  CHECK(parameter_layout(NetConfig{}).segments().size() == 6);
}

TEST_CASE("net: config validation") {
  CHECK_THROWS(NetConfig{3, 16, 1, 3, true}.validate());
  CHECK_THROWS(NetConfig{3, 16, 3, 2, true}.validate());
  CHECK_THROWS(NetConfig{0, 16, 3, 3, true}.validate());
  CHECK_NOTHROW(NetConfig{3, 1, 1, 3, false}.validate());
}

TEST_CASE("net: init is deterministic") {
  CHECK(RestorationNet::init(NetConfig{}, 9).params() == RestorationNet::init(NetConfig{}, 9).params());
  CHECK_FALSE(RestorationNet::init(NetConfig{}, 9).params() == RestorationNet::init(NetConfig{}, 10).params());
}

TEST_CASE("net: zero-parameter residual net is the identity") {
  Rng rng(1);
  const RestorationNet net = RestorationNet::init(NetConfig{}, 2);
  const RestorationNet id = net.with_params(ParamVector::zeros_like(net.params()));
  const Tensor x = random_tensor(rng, {2, 3, 9, 7});
  CHECK(bitwise_equal(id.forward(x), x));
}

TEST_CASE("net: forward is deterministic and with_params isolates copies") {
  Rng rng(2);
  const RestorationNet net = RestorationNet::init(NetConfig{}, 3);
  const Tensor x = random_tensor(rng, {1, 3, 12, 12});
  CHECK(bitwise_equal(net.forward(x), net.forward(x)));
  const RestorationNet same = net.with_params(net.params());
  CHECK(bitwise_equal(same.forward(x), net.forward(x)));
  ParamVector copy = net.params();
  copy[0] += 1.0;
  const RestorationNet changed = net.with_params(copy);
  CHECK(net.params()[0] + 1.0 == changed.params()[0]);
  CHECK_THROWS(RestorationNet(NetConfig{}, parameter_layout(NetConfig{3, 8, 3, 3, true})));
}

TEST_CASE("net: a small gradient step lowers the inner loss") {
  Rng rng(4);
  const RestorationNet net = RestorationNet::init(NetConfig{}, 5);
  const Tensor x = random_tensor(rng, {2, 3, 16, 16});
  const Tensor y = random_tensor(rng, {2, 3, 16, 16});
  for (LossKind kind : {LossKind::kL1, LossKind::kCharbonnier}) {
    const Objective g = [&](const std::vector<Tensor>& p) { return loss(net.forward(x, p), y, {kind, 1e-3}); };
    const ValueGrad vg = value_and_grad(g, net.params());
    const ParamVector phi = axpy(net.params(), -1e-4, vg.grad);
    CHECK(evaluate(g, phi) < vg.value);
  }
}

TEST_CASE("net: checkpoint round-trip") {
  const RestorationNet net = RestorationNet::init(NetConfig{3, 4, 2, 3, true}, 8);
  const std::string bytes = encode_checkpoint(net);
  CHECK(bytes.rfind("DILNET v1\n", 0) == 0);
  const RestorationNet back = decode_checkpoint(bytes);
  CHECK(back.config() == net.config());
  CHECK(back.params() == net.params());
  CHECK(encode_checkpoint(back) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "dil_test_ckpt.dilnet";
  save_checkpoint(net, path);
  CHECK(load_checkpoint(path).params() == net.params());
  std::filesystem::remove(path);

  CHECK_THROWS(decode_checkpoint("DILNET v2\n"));
  CHECK_THROWS(decode_checkpoint(bytes.substr(0, bytes.size() - 5)));
}
