// Stdio worker for the binary frame protocol: reads requests until EOF and
// replies with copies of the last input frame. The failure-mode flags exist
// for exercising client error paths.
//
//   --frames K     frames per reply (default 1)
//   --sleep-ms M   delay before each reply
//   --mode echo|garbage|bad-magic|truncate

#include <unistd.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace {

bool read_exact(uint8_t* data, size_t len) {
    while (len > 0) {
        const ssize_t n = ::read(0, data, len);
        if (n == 0) return false;  // EOF
        if (n < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        data += n;
        len -= static_cast<size_t>(n);
    }
    return true;
}

bool write_exact(const uint8_t* data, size_t len) {
    while (len > 0) {
        const ssize_t n = ::write(1, data, len);
        if (n < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        data += n;
        len -= static_cast<size_t>(n);
    }
    return true;
}

constexpr uint32_t bswap32(uint32_t v) {
    return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

uint32_t load_u32(const uint8_t* p) {
    uint32_t v;
    std::memcpy(&v, p, 4);
    if constexpr (std::endian::native == std::endian::big) v = bswap32(v);
    return v;
}

void store_u32(uint8_t* p, uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) v = bswap32(v);
    std::memcpy(p, &v, 4);
}

}  // namespace

int main(int argc, char** argv) {
    int frames = 1;
    int sleep_ms = 0;
    std::string mode = "echo";
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--frames" && i + 1 < argc) {
            frames = std::stoi(argv[++i]);
        } else if (arg == "--sleep-ms" && i + 1 < argc) {
            sleep_ms = std::stoi(argv[++i]);
        } else if (arg == "--mode" && i + 1 < argc) {
            mode = argv[++i];
        } else {
            return 64;  // usage error
        }
    }
    if (frames < 1) return 64;

    for (;;) {
        uint8_t header[16];
        if (!read_exact(header, sizeof header)) return 0;  // clean shutdown on EOF
        if (std::memcmp(header, "STPB", 4) != 0) return 65;
        const uint32_t n = load_u32(header + 4);
        const uint32_t h = load_u32(header + 8);
        const uint32_t w = load_u32(header + 12);
        const size_t frame_bytes = static_cast<size_t>(h) * w * 4;
        std::vector<uint8_t> payload(static_cast<size_t>(n) * frame_bytes);
        if (!read_exact(payload.data(), payload.size())) return 65;

        if (sleep_ms > 0) ::usleep(static_cast<useconds_t>(sleep_ms) * 1000);

        uint8_t reply_header[16];
        std::memcpy(reply_header, "STPB", 4);
        store_u32(reply_header + 4, static_cast<uint32_t>(frames));
        store_u32(reply_header + 8, h);
        store_u32(reply_header + 12, w);

        if (mode == "bad-magic") {
            std::memcpy(reply_header, "NOPE", 4);
            if (!write_exact(reply_header, sizeof reply_header)) return 66;
            for (int f = 0; f < frames; ++f) {
                if (!write_exact(payload.data() + (n - 1) * frame_bytes, frame_bytes)) return 66;
            }
            continue;
        }
        if (mode == "garbage") {
            std::vector<uint8_t> junk(64, 0x5a);
            if (!write_exact(junk.data(), junk.size())) return 66;
            continue;
        }
        if (!write_exact(reply_header, sizeof reply_header)) return 66;
        if (mode == "truncate") {
            // half of the first frame, then stall until the parent gives up
            if (!write_exact(payload.data() + (n - 1) * frame_bytes, frame_bytes / 2)) return 66;
            uint8_t sink[16];
            read_exact(sink, sizeof sink);
            return 0;
        }
        for (int f = 0; f < frames; ++f) {
            if (!write_exact(payload.data() + (n - 1) * frame_bytes, frame_bytes)) return 66;
        }
    }
}
