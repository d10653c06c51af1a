#include <cmath>

#include "advgen/core.hpp"
#include "doctest.h"

using namespace advgen;

TEST_CASE("validate_image_batch accepts in-range tensors unchanged") {
    ImageBatch b;
    b.data = Tensor(2, 3, 32, 32);
    std::fill(b.data.v.begin(), b.data.v.end(), 0.5f);
    const ImageBatch& out = validate_image_batch(b);
    CHECK(&out == &b);
}

TEST_CASE("validate_image_batch rejects out-of-range values") {
    ImageBatch b;
    b.data = Tensor(1, 3, 4, 4);
    b.data.v[7] = 1.2f;
    CHECK_THROWS_AS(validate_image_batch(b), RangeError);
    b.data.v[7] = -0.01f;
    CHECK_THROWS_AS(validate_image_batch(b), RangeError);
    b.data.v[7] = 0.3f;
    b.data.v[3] = std::nanf("");
    CHECK_THROWS_AS(validate_image_batch(b), RangeError);
}

TEST_CASE("validate_image_batch rejects empty batches") {
    ImageBatch b;
    CHECK_THROWS_AS(validate_image_batch(b), ShapeError);
}

TEST_CASE("budget conversion from 0-255 units") {
    CHECK(budget_from_paper_units(NormP::LInf, 10, 3072, 150528).epsilon ==
          doctest::Approx(10.0 / 255.0).epsilon(1e-12));
    CHECK(budget_from_paper_units(NormP::L2, 2000, 150528, 150528).epsilon ==
          doctest::Approx(2000.0 / 255.0).epsilon(1e-12));
    // 150528 = 49 * 3072, so the RMS-matching factor is exactly 1/7
    CHECK(budget_from_paper_units(NormP::L2, 2000, 3072, 150528).epsilon ==
          doctest::Approx(2000.0 / 255.0 / 7.0).epsilon(1e-12));
}

TEST_CASE("budget conversion is homogeneous in epsilon") {
    double e1 = budget_from_paper_units(NormP::L2, 7, 3072, 150528).epsilon;
    double e2 = budget_from_paper_units(NormP::L2, 14, 3072, 150528).epsilon;
    CHECK(e2 == doctest::Approx(2 * e1).epsilon(1e-12));
}

TEST_CASE("budget conversion rejects non-positive inputs") {
    CHECK_THROWS_AS(budget_from_paper_units(NormP::L2, 0, 3072, 3072), ValueError);
    CHECK_THROWS_AS(budget_from_paper_units(NormP::L2, -1, 3072, 3072), ValueError);
    CHECK_THROWS_AS(budget_from_paper_units(NormP::L2, 10, 0, 3072), ValueError);
    CHECK_THROWS_AS(budget_from_paper_units(NormP::L2, 10, 3072, 0), ValueError);
}

TEST_CASE("fixed pattern regenerates bit-identically from its seed") {
    FixedPattern a = make_fixed_pattern(3, 32, 32, 17);
    FixedPattern b = make_fixed_pattern(3, 32, 32, 17);
    CHECK(a.data.v == b.data.v);
    FixedPattern c = make_fixed_pattern(3, 32, 32, 18);
    CHECK(a.data.v != c.data.v);
    for (float x : a.data.v) {
        CHECK(x >= 0.f);
        CHECK(x <= 1.f);
    }
}

TEST_CASE("distribution validator checks the class-axis sums") {
    PredictionDistribution d;
    d.probs = Tensor(1, 4, 1, 1);
    for (auto& x : d.probs.v) x = 0.25f;
    CHECK_NOTHROW(validate_distribution(d));
    d.probs.v[0] = 0.5f;
    CHECK_THROWS_AS(validate_distribution(d), RangeError);
}

TEST_CASE("sub_seed separates named streams") {
    CHECK(sub_seed(0, "a") != sub_seed(0, "b"));
    CHECK(sub_seed(0, "a") != sub_seed(1, "a"));
    CHECK(sub_seed(5, "pattern") == sub_seed(5, "pattern"));
}
