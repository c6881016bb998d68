fn main() {
    std::process::exit(mfglab::cli::main());
}
