#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>

#include "degan/data.hpp"
#include "degan/rng.hpp"
#include "degan/synthetic.hpp"
#include "doctest.h"

using namespace degan;
namespace fs = std::filesystem;

namespace {

Tensor random_image(long c, long h, long w, std::uint64_t seed) {
    Tensor t({c, h, w});
    Rng r(seed);
    for (long i = 0; i < t.numel(); ++i) t[i] = r.uniform(-1.0, 1.0);
    return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data(), b.data(), sizeof(double) * a.numel()) == 0;
}

std::string hash_bytes(const Tensor& t) {
    // FNV-1a over the raw doubles, hex string.
    std::uint64_t h = 1469598103934665603ull;
    const unsigned char* p = reinterpret_cast<const unsigned char*>(t.data());
    for (size_t i = 0; i < sizeof(double) * t.numel(); ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("degan_test_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("image byte round trip") {
    Image8 img;
    img.width = 5;
    img.height = 4;
    img.channels = 3;
    img.pixels.resize(60);
    for (size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>((i * 37) % 256);
    Image8 back = tensor_to_image(image_to_tensor(img));
    CHECK(back.width == 5);
    CHECK(back.channels == 3);
    CHECK(back.pixels == img.pixels);
}

TEST_CASE("crop bounds") {
    Tensor t = random_image(1, 8, 8, 1);
    Tensor c = crop(t, 2, 3, 4);
    CHECK(c.dim(1) == 4);
    CHECK(c.at(0, 0, 0, 0) == t.at(0, 0, 2, 3));
    CHECK(c.at(0, 0, 3, 3) == t.at(0, 0, 5, 6));
    CHECK_THROWS_AS(crop(t, 6, 0, 4), std::invalid_argument);
    CHECK_THROWS_AS(crop(t, -1, 0, 4), std::invalid_argument);
}

TEST_CASE("hflip is an involution") {
    Tensor t = random_image(3, 7, 9, 2);
    Tensor f = hflip(t);
    CHECK(f.at(0, 1, 3, 0) == t.at(0, 1, 3, 8));
    CHECK(bit_equal(hflip(f), t));
}

TEST_CASE("rotate by zero is the identity") {
    Tensor t = random_image(1, 12, 12, 3);
    CHECK(bit_equal(rotate(t, 0.0), t));
}

TEST_CASE("rotate preserves constant images") {
    Tensor t = Tensor::full({1, 10, 10}, 0.625);
    Tensor r = rotate(t, 13.0);
    for (long i = 0; i < r.numel(); ++i) CHECK(r[i] == 0.625);
}

TEST_CASE("rotate commutes with mirror, bit for bit") {
    Tensor t = random_image(1, 17, 17, 4);
    for (double a : {3.0, 6.0, 9.0, 12.0, 15.0, -3.0, -7.5, -15.0}) {
        Tensor lhs = hflip(rotate(t, a));
        Tensor rhs = rotate(hflip(t), -a);
        CHECK(bit_equal(lhs, rhs));
    }
}

TEST_CASE("augment plan structure") {
    const auto& plan = augment_plan();
    REQUIRE(plan.size() == 110);
    std::set<double> angles;
    std::set<int> crops;
    for (size_t i = 0; i < plan.size(); i += 2) {
        CHECK(plan[i].flipped == false);
        CHECK(plan[i + 1].flipped == true);
        CHECK(plan[i].crop_index == plan[i + 1].crop_index);
        CHECK(plan[i].angle_deg == plan[i + 1].angle_deg);
        angles.insert(plan[i].angle_deg);
        crops.insert(plan[i].crop_index);
    }
    CHECK(angles == std::set<double>{-15, -12, -9, -6, -3, 0, 3, 6, 9, 12, 15});
    CHECK(crops == std::set<int>{0, 1, 2, 3, 4});
}

TEST_CASE("augment produces 110 distinct mirror-paired variants") {
    LabeledImage src;
    src.pixels = random_image(1, 56, 56, 5);
    src.expr_label = 3;
    src.identity_label = 2;
    src.subject_id = "s77";
    auto out = augment(src, 48);
    REQUIRE(out.size() == 110);

    std::set<std::string> hashes;
    for (const auto& v : out) {
        CHECK(v.pixels.dim(1) == 48);
        CHECK(v.pixels.dim(2) == 48);
        CHECK(v.expr_label == 3);
        CHECK(v.identity_label == 2);
        CHECK(v.subject_id == "s77");
        hashes.insert(hash_bytes(v.pixels));
    }
    CHECK(hashes.size() == 110);

    // Entry 2k+1 is the exact pixel mirror of entry 2k.
    for (size_t i = 0; i < out.size(); i += 2)
        CHECK(bit_equal(out[i + 1].pixels, hflip(out[i].pixels)));

    // Variant 0 is the unmodified center crop.
    CHECK(bit_equal(out[0].pixels, crop(src.pixels, 4, 4, 48)));

    CHECK_THROWS_AS(augment(src, 60), std::invalid_argument);
}

TEST_CASE("folds partition subjects near-evenly") {
    std::vector<LabeledImage> dataset;
    for (int s = 0; s < 118; ++s) {
        LabeledImage img;
        img.pixels = Tensor({1, 2, 2});
        img.subject_id = "subj" + std::to_string(1000 + s);
        dataset.push_back(img);
        dataset.push_back(img);  // two images per subject
    }
    FoldSpec folds = make_folds(dataset, 10, 99);
    auto per_fold = folds.subjects_per_fold();
    REQUIRE(per_fold.size() == 10);
    size_t total = 0;
    for (const auto& f : per_fold) {
        CHECK(f.size() >= 11);
        CHECK(f.size() <= 12);
        total += f.size();
    }
    CHECK(total == 118);

    FoldSpec again = make_folds(dataset, 10, 99);
    CHECK(again.assignments == folds.assignments);
    FoldSpec other = make_folds(dataset, 10, 100);
    CHECK(other.assignments != folds.assignments);

    // Test/train index sets partition the dataset and are subject-disjoint.
    auto test_idx = fold_test_indices(dataset, folds, 0);
    auto train_idx = fold_train_indices(dataset, folds, 0);
    CHECK(test_idx.size() + train_idx.size() == dataset.size());
    std::set<std::string> test_subjects, train_subjects;
    for (size_t i : test_idx) test_subjects.insert(dataset[i].subject_id);
    for (size_t i : train_idx) train_subjects.insert(dataset[i].subject_id);
    for (const auto& s : test_subjects) CHECK(train_subjects.count(s) == 0);

    CHECK_THROWS_AS(make_folds(dataset, 1, 5), std::invalid_argument);
    CHECK_THROWS_AS(make_folds(dataset, 119, 5), std::invalid_argument);
}

TEST_CASE("fold spec text round trip") {
    TempDir tmp("folds");
    FoldSpec spec;
    spec.k = 3;
    spec.assignments = {{"alpha", 0}, {"beta", 2}, {"gamma", 1}};
    const std::string path = (tmp.path / "folds.txt").string();
    spec.save_text(path);
    FoldSpec back = FoldSpec::load_text(path);
    CHECK(back.k == 3);
    CHECK(back.assignments == spec.assignments);
}

TEST_CASE("dataset directory round trip") {
    TempDir tmp("ingest");
    auto dataset = generate_synthetic_dataset(2, 2, 2, 77, 32);
    save_synthetic_dataset(dataset, tmp.path.string());

    auto loaded = load_image_dataset(tmp.path.string());
    REQUIRE(loaded.size() == dataset.size());
    CHECK(count_expressions(loaded) == 2);
    CHECK(count_identities(loaded) == 2);
    for (size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].expr_label == dataset[i].expr_label);
        CHECK(loaded[i].identity_label == dataset[i].identity_label);
        CHECK(loaded[i].subject_id == dataset[i].subject_id);
        REQUIRE(loaded[i].pixels.same_shape(dataset[i].pixels));
        double max_err = 0;
        for (long j = 0; j < loaded[i].pixels.numel(); ++j)
            max_err = std::max(max_err, std::abs(loaded[i].pixels[j] - dataset[i].pixels[j]));
        CHECK(max_err <= 1.0 / 255.0);  // 8-bit quantization only
    }

    IngestOptions last_one;
    last_one.last_n_frames = 1;
    auto tail = load_image_dataset(tmp.path.string(), last_one);
    CHECK(tail.size() == 4);
}

TEST_CASE("dataset layout violations raise errors") {
    CHECK_THROWS_AS(load_image_dataset("/nonexistent/degan/path"), std::invalid_argument);

    TempDir tmp("badlayout");
    fs::create_directories(tmp.path / "subjectA" / "not_a_number");
    CHECK_THROWS_AS(load_image_dataset(tmp.path.string()), std::invalid_argument);
}

TEST_CASE("tile grid dimensions") {
    std::vector<Tensor> imgs(5, Tensor::full({1, 8, 8}, 0.0));
    Image8 grid = tile_grid(imgs, 3);
    CHECK(grid.width == 3 * 8 + 4 * 2);
    CHECK(grid.height == 2 * 8 + 3 * 2);
}
