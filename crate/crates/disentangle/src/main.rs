fn main() {
    std::process::exit(disentangle::cli::run());
}
