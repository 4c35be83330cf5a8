#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <functional>

#include "doctest.h"
#include "mixformer/complexity.hpp"

using namespace mixformer;

namespace {
int64_t flops(OpKind kind, int64_t n, int64_t c, int64_t h, int64_t w, int64_t k) {
  ComplexityQuery q;
  q.kind = kind;
  q.n = n;
  q.c = c;
  q.h = h;
  q.w = w;
  q.k = k;
  return op_flops(q);
}
}  // namespace

TEST_CASE("closed-form op costs") {
  CHECK(flops(OpKind::Attention, 1, 4, 2, 2, 1) == 128);          // 2*1*4*(2*2)^2
  CHECK(flops(OpKind::WAttention, 1, 8, 14, 14, 7) == 153664);    // 2*8*196*49
  CHECK(flops(OpKind::DwConv, 1, 4, 8, 8, 3) == 2304);            // 4*64*9
  CHECK(flops(OpKind::Conv, 1, 4, 8, 8, 3) == 9216);              // C x larger
  CHECK_THROWS_AS(flops(OpKind::Conv, 0, 4, 8, 8, 3), std::invalid_argument);
  CHECK_THROWS_AS(op_kind_from_string("pool"), std::invalid_argument);
  CHECK(op_kind_from_string("w_attention") == OpKind::WAttention);
}

TEST_CASE("formula grid: integer equality for the four kernel costs") {
  for (int64_t n : {1, 2}) {
    for (int64_t c : {4, 8}) {
      for (int64_t h : {8, 14}) {
        for (int64_t w : {8, 14}) {
          for (int64_t k : {1, 3, 7}) {
            CHECK(flops(OpKind::Attention, n, c, h, w, k) == 2 * n * c * h * h * w * w);
            CHECK(flops(OpKind::WAttention, n, c, h, w, k) == 2 * n * c * h * w * k * k);
            CHECK(flops(OpKind::Conv, n, c, h, w, k) == n * c * c * h * w * k * k);
            CHECK(flops(OpKind::DwConv, n, c, h, w, k) == n * c * h * w * k * k);
          }
        }
      }
    }
  }
}

TEST_CASE("window attention is linear in area, global attention quadratic") {
  int64_t base_w = flops(OpKind::WAttention, 1, 8, 14, 14, 7);
  int64_t big_w = flops(OpKind::WAttention, 1, 8, 28, 28, 7);
  CHECK(big_w == 4 * base_w);

  int64_t base_g = flops(OpKind::Attention, 1, 8, 14, 14, 7);
  int64_t big_g = flops(OpKind::Attention, 1, 8, 28, 28, 7);
  CHECK(big_g == 16 * base_g);

  CHECK(flops(OpKind::DwConv, 2, 16, 10, 12, 3) ==
        flops(OpKind::Conv, 2, 16, 10, 12, 3) / 16);
}

TEST_CASE("report totals equal the sum over leaves") {
  Model model = build_model("micro", 1);
  ComplexityReport rep = model_report(model, 56, 56);
  std::function<void(const ComplexityEntry&)> walk = [&](const ComplexityEntry& e) {
    int64_t child_params = e.params, child_flops = e.flops;
    for (const auto& c : e.children) {
      child_params += c.total_params();
      child_flops += c.total_flops();
    }
    CHECK(e.total_params() == child_params);
    CHECK(e.total_flops() == child_flops);
    for (const auto& c : e.children) walk(c);
  };
  walk(rep.root);
  CHECK(rep.total_params() == model.param_count());  // params are exact
}

TEST_CASE("variant totals sit near the published sizes") {
  struct Expect {
    const char* name;
    double params_m, flops_g;
  };
  const Expect table[] = {
      {"b1", 8.0, 0.7}, {"b2", 10.0, 0.9}, {"b3", 17.0, 1.9}, {"b4", 35.0, 3.6}};
  for (const Expect& e : table) {
    Model model = build_model(e.name, 1);
    ComplexityReport rep = model_report(model, 224, 224);
    double params_m = static_cast<double>(rep.total_params()) / 1e6;
    double flops_g = static_cast<double>(rep.total_flops()) / 1e9;
    CAPTURE(e.name);
    CAPTURE(params_m);
    CAPTURE(flops_g);
    CHECK(params_m > 0.85 * e.params_m);
    CHECK(params_m < 1.15 * e.params_m);
    CHECK(flops_g > 0.85 * e.flops_g);
    CHECK(flops_g < 1.15 * e.flops_g);
  }
}

TEST_CASE("doubling the input quadruples window-attention and conv terms") {
  Model model = build_model("b1", 1);
  ComplexityReport small = model_report(model, 224, 224);
  ComplexityReport big = model_report(model, 448, 448);
  // whole-model cost is dominated by terms linear in area; spot-check the
  // stage-level attention leaf scaling exactly
  const ComplexityEntry* attn_small = nullptr;
  const ComplexityEntry* attn_big = nullptr;
  std::function<const ComplexityEntry*(const ComplexityEntry&, const std::string&)> find =
      [&](const ComplexityEntry& e, const std::string& name) -> const ComplexityEntry* {
    if (e.name == name) return &e;
    for (const auto& c : e.children) {
      if (const ComplexityEntry* hit = find(c, name)) return hit;
    }
    return nullptr;
  };
  attn_small = find(small.root, "w_attention");
  attn_big = find(big.root, "w_attention");
  REQUIRE(attn_small);
  REQUIRE(attn_big);
  CHECK(attn_big->flops == 4 * attn_small->flops);
  CHECK(big.total_flops() > 3 * small.total_flops());
}

TEST_CASE("text and json renderings carry the totals") {
  Model model = build_model("micro", 2);
  ComplexityReport rep = model_report(model, 56, 56);
  std::string text = rep.to_text();
  CHECK(text.find("stage0") != std::string::npos);
  CHECK(text.find(std::to_string(rep.total_params())) != std::string::npos);
  std::string json = rep.to_json();
  CHECK(json.find("\"total_params\"") != std::string::npos);
  CHECK(json.find("\"flops\"") != std::string::npos);
}
