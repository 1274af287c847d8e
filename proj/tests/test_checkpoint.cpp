// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "tcfnet/checkpoint.hpp"

using namespace tcfnet;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const char* name) {
    return (fs::temp_directory_path() / name).string();
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-exact") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> dist(0.0, 2.0);
    std::vector<Parameter> params;
    params.push_back({"conv1.w", Tensor({5, 5, 1, 6}), true});
    params.push_back({"conv1.b", Tensor({6}), true});
    params.push_back({"fnb.centroids", Tensor({4, 30}), false});
    for (auto& p : params)
        for (double& v : p.tensor.data) v = dist(rng);

    std::string f1 = temp_path("ckpt_a.tcfn"), f2 = temp_path("ckpt_b.tcfn");
    save_checkpoint(f1, params);
    auto loaded = load_checkpoint(f1);
    save_checkpoint(f2, loaded);

    CHECK(slurp(f1) == slurp(f2));
    REQUIRE(loaded.size() == params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        CHECK(loaded[i].name == params[i].name);
        CHECK(loaded[i].tensor.shape == params[i].tensor.shape);
        // values round through f32 once
        for (size_t j = 0; j < params[i].tensor.data.size(); ++j)
            CHECK(loaded[i].tensor.data[j] ==
                  static_cast<double>(static_cast<float>(params[i].tensor.data[j])));
    }
    std::remove(f1.c_str());
    std::remove(f2.c_str());
}

TEST_CASE("corrupted magic is rejected naming the file") {
    std::string f = temp_path("ckpt_bad.tcfn");
    {
        std::ofstream os(f, std::ios::binary);
        os.write("XXXX\x01\x00\x00\x00\x00\x00", 10);
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(f), doctest::Contains("ckpt_bad"), std::runtime_error);
    std::remove(f.c_str());
}

TEST_CASE("truncated file is rejected") {
    std::vector<Parameter> params{{"w", Tensor({8, 8}), true}};
    std::string f = temp_path("ckpt_trunc.tcfn");
    save_checkpoint(f, params);
    auto bytes = slurp(f);
    {
        std::ofstream os(f, std::ios::binary | std::ios::trunc);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint(f), std::runtime_error);
    std::remove(f.c_str());
}

TEST_CASE("unknown version is rejected") {
    std::string f = temp_path("ckpt_ver.tcfn");
    {
        std::ofstream os(f, std::ios::binary);
        os.write("TCFN", 4);
        uint16_t v = 9;
        os.write(reinterpret_cast<const char*>(&v), 2);
        uint32_t n = 0;
        os.write(reinterpret_cast<const char*>(&n), 4);
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(f), doctest::Contains("version 9"), std::runtime_error);
    std::remove(f.c_str());
}

TEST_CASE("missing file is rejected") {
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/never/here.tcfn"), std::runtime_error);
}
