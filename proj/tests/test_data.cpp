#include <cstdio>
#include <fstream>
#include <set>

#include "doctest.h"
#include "mae/data.hpp"
#include "test_support.hpp"

using namespace mae;
using mae::testing::make_desk_corpus;

TEST_CASE("pack/load round trip is bit-identical") {
    PackedDataset ds = make_desk_corpus(10, 42, 16);
    std::string path = "test_data_rt.maeds";
    save_packed(ds, path);
    PackedDataset back = load_packed(path);
    CHECK(back.height == ds.height);
    CHECK(back.width == ds.width);
    CHECK(back.channels == ds.channels);
    CHECK(back.n_classes == ds.n_classes);
    CHECK(back.labels == ds.labels);
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(back.pixels[i] == ds.pixels[i]);

    SUBCASE("saving the loaded copy reproduces the same bytes") {
        std::string path2 = "test_data_rt2.maeds";
        save_packed(back, path2);
        std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
        std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
        CHECK(sa == sb);
        std::remove(path2.c_str());
        std::remove((path2 + ".stats").c_str());
    }

    SUBCASE("stats sidecar matches a direct mean") {
        double direct = 0.0;
        std::size_t count = 0;
        for (const auto& img : ds.pixels)
            for (std::size_t i = 0; i < img.size(); i += 3) {
                direct += img[i] / 255.0;
                ++count;
            }
        direct /= static_cast<double>(count);
        CHECK(std::abs(back.channel_mean[0] - direct) < 1e-6);
    }

    std::remove(path.c_str());
    std::remove((path + ".stats").c_str());
}

TEST_CASE("load errors carry byte offsets") {
    std::string path = "test_data_bad.maeds";

    SUBCASE("bad magic") {
        std::ofstream os(path, std::ios::binary);
        os << "NOTMAE";
        os.close();
        CHECK_THROWS_WITH_AS(load_packed(path), doctest::Contains("byte offset 0"), DataError);
    }

    SUBCASE("truncated header") {
        std::ofstream os(path, std::ios::binary);
        os << "MAEDS1";
        os.write("\x02\x00", 2);
        os.close();
        CHECK_THROWS_AS(load_packed(path), DataError);
    }

    SUBCASE("label out of range") {
        PackedDataset ds = make_desk_corpus(2, 1, 8);
        ds.labels[1] = 7;  // n_classes stays 2
        save_packed(ds, path);
        CHECK_THROWS_WITH_AS(load_packed(path), doctest::Contains("label 7"), DataError);
    }

    SUBCASE("truncated pixel payload") {
        PackedDataset ds = make_desk_corpus(2, 1, 8);
        save_packed(ds, path);
        std::ifstream is(path, std::ios::binary);
        std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        is.close();
        std::ofstream os(path, std::ios::binary);
        os.write(all.data(), static_cast<std::streamsize>(all.size() - 10));
        os.close();
        CHECK_THROWS_WITH_AS(load_packed(path), doctest::Contains("byte offset"), DataError);
    }

    std::remove(path.c_str());
    std::remove((path + ".stats").c_str());
}

TEST_CASE("standardize and unstandardize are inverse") {
    std::vector<double> img = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    std::vector<double> orig = img;
    std::vector<double> mean = {0.4, 0.5, 0.45}, stddev = {0.2, 0.3, 0.25};
    standardize(img, 3, mean, stddev);
    CHECK(img[0] == doctest::Approx((0.1 - 0.4) / 0.2));
    unstandardize(img, 3, mean, stddev);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(img[i] == doctest::Approx(orig[i]).epsilon(1e-12));
}

TEST_CASE("center crop takes the middle window") {
    // 4x4 single-channel ramp
    std::vector<double> img(16);
    for (std::size_t i = 0; i < 16; ++i) img[i] = static_cast<double>(i);
    auto out = center_crop(img, 4, 4, 1, 2);
    CHECK(out == std::vector<double>{5, 6, 9, 10});
    CHECK_THROWS_AS(center_crop(img, 4, 4, 1, 5), std::invalid_argument);
}

TEST_CASE("hflip is an involution") {
    Rng rng(1);
    std::vector<double> img(5 * 6 * 3);
    for (auto& v : img) v = rng.uniform();
    auto orig = img;
    hflip_inplace(img, 5, 6, 3);
    CHECK(img != orig);
    hflip_inplace(img, 5, 6, 3);
    CHECK(img == orig);
}

TEST_CASE("bilinear full-window resize at native size is the identity") {
    Rng rng(2);
    std::vector<double> img(8 * 8 * 3);
    for (auto& v : img) v = rng.uniform();
    auto out = bilinear_crop_resize(img, 8, 8, 3, 0.0, 0.0, 8.0, 8.0, 8);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(out[i] == doctest::Approx(img[i]).epsilon(1e-12));
}

TEST_CASE("random resized crop stays within value bounds") {
    PackedDataset ds = make_desk_corpus(4, 3, 16);
    AugmentSpec spec{AugmentMode::crop_random_size, true, 16, 0.2, 1.0};
    Rng rng(7);
    for (std::size_t i = 0; i < 4; ++i) {
        Rng r = rng.fork(i);
        auto img = augment_sample(ds, i, spec, r);
        CHECK(img.size() == 16 * 16 * 3);
        // standardized values stay within (0-mean)/std .. (1-mean)/std
        for (std::size_t j = 0; j < img.size(); ++j) {
            std::size_t c = j % 3;
            double lo = (0.0 - ds.channel_mean[c]) / ds.channel_std[c];
            double hi = (1.0 - ds.channel_mean[c]) / ds.channel_std[c];
            CHECK(img[j] >= lo - 1e-9);
            CHECK(img[j] <= hi + 1e-9);
        }
    }

    SUBCASE("deterministic per fork") {
        Rng a = Rng(7).fork(std::size_t{2}), b = Rng(7).fork(std::size_t{2});
        CHECK(augment_sample(ds, 2, spec, a) == augment_sample(ds, 2, spec, b));
    }
}

TEST_CASE("batch indices") {
    SUBCASE("one full batch is a permutation") {
        auto batches = batch_indices(10, 10, 5, 0);
        REQUIRE(batches.size() == 1);
        std::set<std::size_t> seen(batches[0].begin(), batches[0].end());
        CHECK(seen.size() == 10);
    }

    SUBCASE("same (seed, epoch) is identical") {
        CHECK(batch_indices(100, 16, 9, 3) == batch_indices(100, 16, 9, 3));
        CHECK(batch_indices(100, 16, 9, 3) != batch_indices(100, 16, 9, 4));
    }

    SUBCASE("epoch covers each sample exactly once, any batch size") {
        for (std::size_t bs : {1, 3, 7, 16, 100, 150}) {
            auto batches = batch_indices(100, bs, 1, 2);
            std::vector<std::size_t> counts(100, 0);
            for (const auto& b : batches)
                for (auto i : b) ++counts[i];
            for (auto c : counts) CHECK(c == 1);
        }
    }

    SUBCASE("final partial batch kept") {
        auto batches = batch_indices(10, 4, 0, 0);
        REQUIRE(batches.size() == 3);
        CHECK(batches[2].size() == 2);
    }
}

TEST_CASE("make_batch shape and determinism") {
    PackedDataset ds = make_desk_corpus(6, 11, 16);
    AugmentSpec spec{AugmentMode::crop_random_size, true, 16, 0.2, 1.0};
    Rng a(3), b(3);
    Tensor ba = make_batch(ds, {0, 2, 4}, spec, a);
    Tensor bb = make_batch(ds, {0, 2, 4}, spec, b);
    CHECK(ba.shape() == Shape{3, 16, 16, 3});
    CHECK(ba.data() == bb.data());

    // augmentation keyed by dataset index: the same sample in a different
    // slot of the same batch list gets the same pixels
    Rng c(3);
    Tensor bc = make_batch(ds, {2}, spec, c);
    for (std::size_t i = 0; i < 16 * 16 * 3; ++i)
        CHECK(bc.data()[i] == ba.data()[16 * 16 * 3 + i]);
}

TEST_CASE("empty dataset gets fallback stats") {
    PackedDataset ds;
    ds.channels = 3;
    ds.compute_stats();
    CHECK(ds.channel_mean == std::vector<double>{0.5, 0.5, 0.5});
    CHECK(ds.channel_std == std::vector<double>{0.25, 0.25, 0.25});
}
