fn main() {
    std::process::exit(emhd::run());
}
