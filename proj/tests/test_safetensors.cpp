#include <doctest.h>

#include <atomic>
#include <thread>

#include "tvmerge/errors.hpp"
#include "tvmerge/safetensors.hpp"
#include "testutil.hpp"

using namespace tvmerge;
using testutil::TempDir;

TEST_CASE("minimal file with one 2x2 zero tensor") {
    TempDir dir;
    const std::string path = dir.file("one.safetensors");
    write_tensors({{"w", testutil::f32_tensor({2, 2}, ArrayXf::Zero(4))}}, path);

    const Checkpoint c = Checkpoint::open(path);
    REQUIRE(c.metas().size() == 1);
    CHECK(c.metas()[0].name == "w");
    CHECK(c.metas()[0].shape == Shape{2, 2});
    CHECK(c.metas()[0].dtype == Dtype::F32);
    const ArrayXf v = c.read_f32("w");
    REQUIRE(v.size() == 4);
    CHECK((v == 0.0f).all());
}

TEST_CASE("copying an opened checkpoint is byte-identical, odd header included") {
    TempDir dir;
    // Hand-crafted header: unsorted keys, extra whitespace, metadata block.
    const std::string header =
        "{ \"__metadata__\": {\"who\": \"test\"},\n"
        "  \"z\":  {\"dtype\":\"F16\",\"shape\":[3],\"data_offsets\":[0,6]},\n"
        "  \"a\":  {\"dtype\":\"F32\",\"shape\":[1],\"data_offsets\":[6,10]} }";
    std::string data(6, '\x41');  // F16 payload
    data += testutil::le_f32(2.5f);
    const std::string src = dir.file("src.safetensors");
    testutil::write_file(src, testutil::container_bytes(header, data));

    const Checkpoint c = Checkpoint::open(src);
    REQUIRE(c.metas().size() == 2);
    CHECK(c.metas()[0].name == "z");  // file order preserved
    CHECK(c.metas()[1].name == "a");
    CHECK(c.read_f32("a")[0] == 2.5f);

    const std::string dst = dir.file("dst.safetensors");
    write_checkpoint_copy(c, dst);
    CHECK(testutil::files_equal(src, dst));
}

TEST_CASE("writer output round-trips through open and copy") {
    TempDir dir;
    const std::string path = dir.file("multi.safetensors");
    std::vector<NamedTensor> tensors;
    tensors.push_back({"layer.weight", testutil::f32_tensor({4, 3}, testutil::gaussian_values(12, 1))});
    Tensor half;
    half.shape = {2, 2};
    half.dtype = Dtype::F16;
    half.dtype_str = "F16";
    half.values = ArrayXf(4);
    half.values << 1.0f, -0.5f, 0.25f, 2.0f;  // exactly representable halves
    tensors.push_back({"layer.bias", half});
    Tensor bf;
    bf.shape = {3};
    bf.dtype = Dtype::BF16;
    bf.dtype_str = "BF16";
    bf.values = ArrayXf(3);
    bf.values << 1.0f, -2.0f, 0.5f;
    tensors.push_back({"norm", bf});
    write_tensors(tensors, path);

    const Checkpoint c = Checkpoint::open(path);
    REQUIRE(c.metas().size() == 3);
    CHECK(c.read_f32("layer.bias")[3] == 2.0f);
    CHECK(c.read_f32("norm")[1] == -2.0f);

    const std::string copy = dir.file("copy.safetensors");
    write_checkpoint_copy(c, copy);
    CHECK(testutil::files_equal(path, copy));
}

TEST_CASE("empty checkpoint") {
    TempDir dir;
    const std::string path = dir.file("empty.safetensors");
    write_tensors({}, path);
    const Checkpoint c = Checkpoint::open(path);
    CHECK(c.metas().empty());
    const std::string copy = dir.file("copy.safetensors");
    write_checkpoint_copy(c, copy);
    CHECK(testutil::files_equal(path, copy));
}

TEST_CASE("raw passthrough of integer and opaque dtypes") {
    TempDir dir;
    const std::string path = dir.file("mixed.safetensors");
    {
        CheckpointWriter w(path);
        w.declare("ids", "I64", {3});
        w.declare("blob", "MYSTERY", {2}, 3);
        std::vector<std::byte> ids(24);
        for (int i = 0; i < 24; ++i) ids[i] = static_cast<std::byte>(i);
        std::vector<std::byte> blob(6, std::byte{0xAB});
        w.append_raw(ids);
        w.append_raw(blob);
        w.finish();
    }
    const Checkpoint c = Checkpoint::open(path);
    CHECK(c.meta("ids").dtype == Dtype::I64);
    CHECK(c.meta("blob").dtype == Dtype::Other);
    CHECK(c.meta("blob").elem_size == 3);
    CHECK_THROWS_AS((void)c.read_f32("ids"), ValidationError);
    CHECK_THROWS_AS((void)c.read_f32("blob"), ValidationError);
    auto raw = c.raw(c.meta("blob"));
    CHECK(raw.size() == 6);
    CHECK(raw[0] == std::byte{0xAB});
}

TEST_CASE("malformed containers are rejected") {
    TempDir dir;
    const std::string path = dir.file("bad.safetensors");

    SUBCASE("file shorter than the length prefix") {
        testutil::write_file(path, "abc");
        CHECK_THROWS_AS(Checkpoint::open(path), IoError);
    }
    SUBCASE("header length past end of file") {
        std::string bytes = testutil::container_bytes("{}", "");
        bytes[0] = 100;  // claims a 100-byte header in a 10-byte file
        testutil::write_file(path, bytes);
        CHECK_THROWS_AS(Checkpoint::open(path), IoError);
    }
    SUBCASE("header is not JSON") {
        testutil::write_file(path, testutil::container_bytes("not json", ""));
        CHECK_THROWS_AS(Checkpoint::open(path), IoError);
    }
    SUBCASE("tensor data region truncated") {
        const std::string header =
            R"({"w":{"dtype":"F32","shape":[4],"data_offsets":[0,16]}})";
        testutil::write_file(path, testutil::container_bytes(header, "only8bye"));
        CHECK_THROWS_AS(Checkpoint::open(path), IoError);
    }
    SUBCASE("duplicate tensor name") {
        const std::string header =
            R"({"w":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},)"
            R"("w":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}})";
        testutil::write_file(path, testutil::container_bytes(header, std::string(8, '\0')));
        CHECK_THROWS_AS(Checkpoint::open(path), IoError);
    }
    SUBCASE("byte range does not match shape and dtype") {
        const std::string header =
            R"({"w":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}})";
        testutil::write_file(path, testutil::container_bytes(header, std::string(8, '\0')));
        CHECK_THROWS_AS(Checkpoint::open(path), IoError);
    }
    SUBCASE("non-contiguous offsets") {
        const std::string header =
            R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},)"
            R"("b":{"dtype":"F32","shape":[1],"data_offsets":[8,12]}})";
        testutil::write_file(path, testutil::container_bytes(header, std::string(12, '\0')));
        CHECK_THROWS_AS(Checkpoint::open(path), IoError);
    }
    SUBCASE("trailing bytes not covered by the header") {
        const std::string header =
            R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})";
        testutil::write_file(path, testutil::container_bytes(header, std::string(8, '\0')));
        CHECK_THROWS_AS(Checkpoint::open(path), IoError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(Checkpoint::open(dir.file("nope.safetensors")), IoError);
    }
}

TEST_CASE("unknown tensor name") {
    TempDir dir;
    const std::string path = dir.file("a.safetensors");
    write_tensors({{"w", testutil::f32_tensor({2}, ArrayXf::Zero(2))}}, path);
    const Checkpoint c = Checkpoint::open(path);
    CHECK_THROWS_AS((void)c.read_f32("lm_head.weight"), ValidationError);
    CHECK(c.find("lm_head.weight") == nullptr);
    CHECK(c.has("w"));
}

TEST_CASE("reads are repeatable and order-independent") {
    TempDir dir;
    const std::string path = dir.file("rr.safetensors");
    std::vector<NamedTensor> tensors;
    for (int i = 0; i < 6; ++i)
        tensors.push_back({"t" + std::to_string(i),
                           testutil::f32_tensor({8}, testutil::gaussian_values(8, 100 + i))});
    write_tensors(tensors, path);
    const Checkpoint c = Checkpoint::open(path);

    std::vector<ArrayXf> forward, backward;
    for (int i = 0; i < 6; ++i) forward.push_back(c.read_f32("t" + std::to_string(i)));
    for (int i = 5; i >= 0; --i) backward.push_back(c.read_f32("t" + std::to_string(i)));
    for (int i = 0; i < 6; ++i) {
        CHECK((forward[i] == backward[5 - i]).all());
        CHECK((forward[i] == c.read_f32("t" + std::to_string(i))).all());
    }
}

TEST_CASE("concurrent reads of distinct tensors match serial reads") {
    TempDir dir;
    const std::string path = dir.file("mt.safetensors");
    std::vector<NamedTensor> tensors;
    for (int i = 0; i < 16; ++i)
        tensors.push_back({"t" + std::to_string(i),
                           testutil::f32_tensor({64}, testutil::gaussian_values(64, 500 + i))});
    write_tensors(tensors, path);
    const Checkpoint c = Checkpoint::open(path);

    std::vector<ArrayXf> serial(16);
    for (int i = 0; i < 16; ++i) serial[i] = c.read_f32("t" + std::to_string(i));

    std::vector<ArrayXf> parallel(16);
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int w = 0; w < 4; ++w)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < 16; i = next.fetch_add(1))
                parallel[i] = c.read_f32("t" + std::to_string(i));
        });
    for (auto& t : pool) t.join();
    for (int i = 0; i < 16; ++i) CHECK((serial[i] == parallel[i]).all());
}

TEST_CASE("widen and narrow through the container") {
    TempDir dir;
    const std::string path = dir.file("half.safetensors");
    Tensor t;
    t.shape = {2};
    t.dtype = Dtype::F16;
    t.dtype_str = "F16";
    t.values = ArrayXf(2);
    t.values << 1.0f, 1.0000001f;  // second value is not a half; narrows to 1.0
    write_tensors({{"h", t}}, path);
    const Checkpoint c = Checkpoint::open(path);
    const ArrayXf v = c.read_f32("h");
    CHECK(v[0] == 1.0f);
    CHECK(v[1] == 1.0f);
}

TEST_CASE("writer rejects bad declarations and mismatched appends") {
    TempDir dir;
    CheckpointWriter w(dir.file("w.safetensors"));
    w.declare("a", "F32", {2});
    CHECK_THROWS_AS(w.declare("a", "F32", {2}), ValidationError);  // duplicate
    CHECK_THROWS_AS(w.declare("b", "WAT", {2}), ValidationError);  // unknown width
    ArrayXf three(3);
    three << 1, 2, 3;
    CHECK_THROWS_AS(w.append_f32(three), ValidationError);  // wrong length
}
