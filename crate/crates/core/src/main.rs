fn main() {
    std::process::exit(spectraprobe::cli::run());
}
