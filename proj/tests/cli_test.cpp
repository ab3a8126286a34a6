#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include <json.hpp>

using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result sfi(const std::string& args) {
  const std::string cmd = std::string(SFI_CLI_PATH) + " " + args + " 2>/dev/null";
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  for (size_t n; (n = std::fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string program(const std::string& name) { return std::string(SFI_SOURCE_DIR) + "/tests/programs/" + name; }

struct TempDir {
  std::filesystem::path path;
  TempDir() : path(std::filesystem::temp_directory_path() / ("sfi-cli-" + std::to_string(::getpid()))) {
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

}  // namespace

TEST_CASE("cli decode") {
  const auto r = sfi("decode 0x30954A00");
  CHECK(r.code == 0);
  CHECK(r.out == "add x18, x21, w5, uxtw\n");
  CHECK(sfi("decode 0xF0000000").code == 1);
  CHECK(sfi("decode banana").code == 2);
}

TEST_CASE("cli exit-code matrix") {
  TempDir dir;
  const std::string hello = dir / "hello.sbx", bad = dir / "bad.sbx", esc = dir / "esc.sbx", rw = dir / "hello.s";

  CHECK(sfi("asm " + program("hello.s") + " -o " + dir / "raw.sbx").code == 0);
  CHECK(sfi("verify " + dir / "raw.sbx").code == 1);
  CHECK(sfi("rewrite " + program("hello.s") + " -o " + rw).code == 0);
  CHECK(sfi("asm " + rw + " -o " + hello + " --entry start").code == 0);
  CHECK(sfi("asm " + program("unsafe_store.s") + " -o " + bad).code == 0);
  CHECK(sfi("asm " + program("escape.s") + " -o " + esc).code == 0);

  CHECK(sfi("verify " + hello).code == 0);
  const auto v = sfi("verify " + bad + " --json");
  CHECK(v.code == 1);
  const json j = json::parse(v.out);
  CHECK(j["ok"] == false);
  CHECK(j["violations"][0]["reason"] == "BadAddressBase");
  CHECK(j["violations"][0]["text"] == "str x0, [x2]");
  CHECK(json::parse(sfi("verify " + hello + " --json").out)["ok"] == true);

  const auto run = sfi("run " + hello);
  CHECK(run.code == 0);
  CHECK(run.out == "hello");
  CHECK(sfi("run " + bad).code == 1);   // refused at boot
  CHECK(sfi("run " + esc).code == 1);   // faults

  // Trace: one JSON object per line, then the exit status.
  const auto trace = sfi("run " + hello + " --trace");
  std::vector<json> lines;
  for (size_t at = 0, nl; (nl = trace.out.find('\n', at)) != std::string::npos; at = nl + 1)
    lines.push_back(json::parse(trace.out.substr(at, nl - at)));
  REQUIRE(lines.size() == 3);
  CHECK(lines[0]["call"] == "write");
  CHECK(lines[0]["bytes"] == "68656c6c6f");
  CHECK(lines[2]["status"] == "exit");
  CHECK(lines[2]["code"] == 0);
  const auto esc_trace = sfi("run " + esc + " --trace");
  CHECK(json::parse(esc_trace.out)["fault"] == "MemUnmapped");

  CHECK(sfi("run " + program("spin.s")).code == 1);  // not an image
  CHECK(sfi("verify /nonexistent/image.sbx").code == 3);
  CHECK(sfi("rewrite " + program("escape.s") + " --profile nosuch").code == 2);
  CHECK(sfi("nosuch").code == 2);
  CHECK(sfi("").code == 2);

  const auto dis = sfi("disasm " + hello);
  CHECK(dis.code == 0);
  CHECK(dis.out.find("add sp, x21, w17, uxtw") != std::string::npos);

  // The listing reassembles to the same code.
  std::FILE* f = std::fopen((dir / "dis.s").c_str(), "w");
  std::fputs(dis.out.c_str(), f);
  std::fclose(f);
  CHECK(sfi("asm " + dir / "dis.s" + " -o " + dir / "again.sbx").code == 0);
  CHECK(sfi("disasm " + dir / "again.sbx").out.substr(dis.out.find('\n')) == dis.out.substr(dis.out.find('\n')));
}

TEST_CASE("cli fuzz and census") {
  const auto clean = sfi("fuzz --seed 1 --iters 2000 --json");
  CHECK(clean.code == 0);
  const json j = json::parse(clean.out);
  CHECK(j["violations"] == 0);
  CHECK(j["iterations"] == 2000);
  CHECK(sfi("fuzz --seed 1 --iters 2000 --json").out == clean.out);

  const auto m4 = sfi("fuzz --seed 1 --iters 20000 --mutation M4 --json");
  CHECK(m4.code == 1);
  CHECK(json::parse(m4.out)["violations"] == 1);
  CHECK(sfi("fuzz --mutation M9").code == 2);
}

TEST_CASE("cli prove and emit-smt") {
  const auto ok = sfi("prove --class guard,br --profile sparse --workers 2 --json");
  CHECK(ok.code == 0);
  const json j = json::parse(ok.out);
  REQUIRE(j["subjects"].size() == 2);
  for (const auto& r : j["subjects"]) CHECK(r["status"] == "Proved");

  CHECK(sfi("prove --class store-x18 --mutation M3").code == 1);
  CHECK(sfi("prove --class guard --solver-cmd false").code == 3);
  CHECK(sfi("prove --class nosuch").code == 2);
  CHECK(sfi("prove").code == 2);
  CHECK(sfi("prove --class guard --workers 0").code == 2);

  const auto a = sfi("emit-smt --word 0x30954A00");
  CHECK(a.code == 0);
  CHECK(a.out.find("(check-sat)") != std::string::npos);
  CHECK(sfi("emit-smt --word 0x30954A00").out == a.out);

  TempDir dir;
  CHECK(sfi("emit-smt --class guard,br --profile dense --out-dir " + dir.path.string()).code == 0);
  CHECK(std::filesystem::exists(dir / "guard.dense.smt2"));
  CHECK(std::filesystem::exists(dir / "br.dense.smt2"));
}
