fn main() {
    std::process::exit(xmem::cli::run());
}
