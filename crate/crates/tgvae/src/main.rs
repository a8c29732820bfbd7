fn main() {
    std::process::exit(tgvae::cli::run());
}
