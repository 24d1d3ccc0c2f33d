fn main() {
    std::process::exit(predmdp::cli::main_entry());
}
