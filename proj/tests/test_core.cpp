/*
   Copyright 2026 The sgdgap Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace sgdgap;
using namespace sgdgap::testing;

namespace {

Batch ids_batch(std::vector<std::uint64_t> ids) {
    std::vector<Example> ex(ids.size(), ex1(0.0, 0.0));
    return Batch(std::move(ex), std::move(ids));
}

} // namespace

TEST(Batch, RejectsEmptyDuplicateAndMismatchedIds) {
    EXPECT_THROW(Batch({}, {}), std::invalid_argument);
    EXPECT_THROW(ids_batch({1, 2, 1}), std::invalid_argument);
    EXPECT_THROW(Batch({ex1(1, 1)}, {1, 2}), std::invalid_argument);
    EXPECT_THROW(Batch({ex1(std::nan(""), 1)}, {1}), std::invalid_argument);
}

TEST(Batch, SliceAndSelectKeepOrder) {
    const auto b = batch_of({ex1(1, 0), ex1(2, 0), ex1(3, 0), ex1(4, 0)}, 10);
    const auto s = b.slice(1, 2);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s.ids()[0], 11u);
    EXPECT_EQ(s[1].input(0), 3.0);
    const std::vector<std::size_t> pos{3, 0};
    const auto t = b.select(pos);
    EXPECT_EQ(t.ids()[0], 13u);
    EXPECT_EQ(t.ids()[1], 10u);
    EXPECT_THROW(b.slice(3, 2), std::invalid_argument);
}

TEST(OverlapFactor, DisjointIsZero) {
    EXPECT_EQ(overlap_factor(ids_batch({1, 2, 3}), ids_batch({4, 5})), 0.0);
}

TEST(OverlapFactor, SelfOverlapIsInverseSize) {
    const auto a = ids_batch({0, 1, 2, 3, 4, 5, 6});
    EXPECT_DOUBLE_EQ(overlap_factor(a, a), 1.0 / 7.0);
}

TEST(OverlapFactor, HandEvaluatedPartialOverlap) {
    EXPECT_DOUBLE_EQ(overlap_factor(ids_batch({0, 1, 2, 3}), ids_batch({2, 3})), 0.25);
}

TEST(OverlapFactor, PropertiesOnRandomBatches) {
    Gen gen(7);
    for (int trial = 0; trial < 200; ++trial) {
        auto draw = [&] {
            std::vector<std::uint64_t> pool(30);
            std::iota(pool.begin(), pool.end(), 0);
            std::shuffle(pool.begin(), pool.end(), gen.engine());
            pool.resize(1 + gen.index(20));
            return ids_batch(pool);
        };
        const auto a = draw();
        const auto b = draw();
        const double f = overlap_factor(a, b);
        EXPECT_EQ(f, overlap_factor(b, a));
        EXPECT_GE(f, 0.0);
        EXPECT_LE(f, std::min(1.0 / a.size(), 1.0 / b.size()) + 1e-15);
        EXPECT_EQ(overlap_factor(a, a) * static_cast<double>(a.size()), 1.0);
    }
}

TEST(GeneratorSpec, DefaultTeacherIsFirstBasisVector) {
    const auto g = GeneratorSpec::make(3, 0.5);
    EXPECT_EQ(g.teacher, basis(3, 0));
    EXPECT_THROW(GeneratorSpec::make(0, 1.0), std::invalid_argument);
    auto bad = g;
    bad.noise_std = std::numeric_limits<double>::infinity();
    EXPECT_THROW(bad.validate(), std::invalid_argument);
}
