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

#pragma once

#include "sgdgap/core.hpp"
#include "sgdgap/rng.hpp"

#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace sgdgap {

/// Draws n examples from the teacher-student generator, ids first_id, first_id+1, ...
inline Batch sample_batch(const GeneratorSpec& gen, std::size_t n, Stream& rng, std::uint64_t first_id) {
    detail::require(n >= 1, "sample size must be >= 1");
    const auto d = static_cast<Eigen::Index>(gen.d);
    std::vector<Example> ex(n);
    std::vector<std::uint64_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::VectorXd x(d);
        for (Eigen::Index k = 0; k < d; ++k) x(k) = rng.normal();
        const double noise = rng.normal();
        ex[i].target = gen.teacher.dot(x) + gen.noise_std * noise;
        ex[i].input = std::move(x);
        ids[i] = first_id + i;
    }
    return Batch(std::move(ex), std::move(ids));
}

/// One train/test realization. Train ids are [0, n_train), test ids follow.
/// The result is a pure function of (gen, sizes, seed, index).
inline DataRealization sample_realization(const GeneratorSpec& gen, std::size_t n_train, std::size_t n_test,
                                          std::uint64_t seed, std::uint32_t index = 0) {
    gen.validate();
    detail::require(n_train >= 2, "n_train must be >= 2");
    detail::require(n_test >= 1, "n_test must be >= 1");
    Stream train_rng(seed, index, StreamTag::Train);
    Stream test_rng(seed, index, StreamTag::Test);
    auto train = sample_batch(gen, n_train, train_rng, 0);
    auto test = sample_batch(gen, n_test, test_rng, n_train);
    return DataRealization{std::move(train), std::move(test), seed, index, gen};
}

/// Seeded Fisher-Yates shuffle of b split into k contiguous equal batches.
inline std::vector<Batch> partition(const Batch& b, std::size_t k, std::uint64_t seed, std::uint32_t index = 0) {
    detail::require(k >= 1 && b.size() % k == 0, "partition count must divide the batch size");
    std::vector<std::size_t> order(b.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Stream rng(seed, index, StreamTag::Partition);
    for (std::size_t i = order.size() - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i + 1));
        std::swap(order[i], order[j]);
    }
    const std::size_t m = b.size() / k;
    std::vector<Batch> out;
    out.reserve(k);
    for (std::size_t p = 0; p < k; ++p) {
        out.push_back(b.select(std::span<const std::size_t>(order).subspan(p * m, m)));
    }
    return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

inline std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

} // namespace detail

/// Reads a CSV dataset with header x_1,...,x_d,y. Ids are assigned 0, 1, ...
inline Batch load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw ParseError(1, "missing header row");
    const auto header = detail::split_csv_line(line);
    if (header.size() < 2 || detail::trim(header.back()) != "y") {
        throw ParseError(1, "header must be x_1,...,x_d,y");
    }
    for (std::size_t k = 0; k + 1 < header.size(); ++k) {
        if (detail::trim(header[k]) != "x_" + std::to_string(k + 1)) {
            throw ParseError(1, "header must be x_1,...,x_d,y");
        }
    }
    const std::size_t d = header.size() - 1;

    std::vector<Example> ex;
    std::vector<std::uint64_t> ids;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != d + 1) {
            throw ParseError(lineno, "expected " + std::to_string(d + 1) + " fields, found " +
                                         std::to_string(cells.size()));
        }
        Example e;
        e.input.resize(static_cast<Eigen::Index>(d));
        for (std::size_t k = 0; k <= d; ++k) {
            const auto cell = detail::trim(cells[k]);
            double v = 0.0;
            const auto* end = cell.data() + cell.size();
            const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
            if (cell.empty() || ec != std::errc{} || ptr != end || !std::isfinite(v)) {
                throw ParseError(lineno, "non-numeric field '" + cell + "'");
            }
            if (k < d) {
                e.input(static_cast<Eigen::Index>(k)) = v;
            } else {
                e.target = v;
            }
        }
        ex.push_back(std::move(e));
        ids.push_back(ids.size());
    }
    detail::require(!ex.empty(), "dataset '" + path + "' has no rows");
    return Batch(std::move(ex), std::move(ids));
}

} // namespace sgdgap
